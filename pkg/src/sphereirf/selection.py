"""Selection of the spatial truncation order from moment tables.

The statistic M(n) measures how far the change between order-n and
order-(n+1) residual moment tables is from a pure degree-n Legendre band.
Once the truncation order reaches the true non-homogeneity order, removing
one more degree only strips a single spherical band, so the change is
exactly proportional to P_n(cos psi) and M(n) collapses; below that order
the residuals still carry anchored low-degree structure with no such shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .estimate import BinSpec, MoMTable, mom_estimate
from .simulate import SampledField, difference_time, truncate_harmonics
from .sphere import legendre_p

__all__ = [
    "DEFAULT_DROP_RATIO",
    "OrderReport",
    "m_criterion",
    "m_statistic",
    "select_kappa",
]

DEFAULT_DROP_RATIO = 10.0


@dataclass(frozen=True)
class OrderReport:
    """Decay profile of M(n) together with the order it suggests.

    The selection rule is a declared heuristic; ``M`` and ``logM`` are
    always carried in full so the decision can be reviewed by eye, the
    same way a scree plot is read.
    """

    n_values: tuple[int, ...]
    M: tuple[float, ...]
    logM: tuple[float, ...]
    kappa_hat: int
    rule: str

    def __post_init__(self) -> None:
        if len(self.n_values) == 0:
            raise ConfigError("order report needs at least one order")
        if self.n_values != tuple(range(len(self.n_values))):
            raise ConfigError("n_values must be the consecutive orders 0..n_max")
        if len(self.M) != len(self.n_values) or len(self.logM) != len(self.n_values):
            raise ConfigError("M and logM must have one entry per order")
        for value in self.M:
            if not np.isfinite(value) or value < 0.0:
                raise ConfigError(f"M entries must be finite and >= 0, got {value}")
        if not 0 <= self.kappa_hat <= self.n_values[-1]:
            raise ConfigError("kappa_hat must be one of the reported orders")

    def to_dict(self) -> dict:
        return {
            "n": list(self.n_values),
            "M": list(self.M),
            "logM": [x if np.isfinite(x) else None for x in self.logM],
            "kappa_hat": self.kappa_hat,
            "rule": self.rule,
        }


def m_statistic(table_n: MoMTable, table_next: MoMTable, degree: int) -> float:
    """Squared departure of ``table_n - table_next`` from a degree-``degree`` band.

    The band amplitude at each lag is read off the smallest-distance bin,
    where P_degree is closest to one; cells missing from either table are
    skipped, and lags whose amplitude row is missing contribute nothing.
    """
    if table_n.bins != table_next.bins:
        raise ConfigError("moment tables must share one bin layout")
    if degree < 0:
        raise ConfigError(f"degree must be >= 0, got {degree}")
    delta = table_n.estimates - table_next.estimates
    filled = (table_n.counts > 0) & (table_next.counts > 0)
    pn = legendre_p(degree, np.cos(np.asarray(table_n.bins.psi_centers)))
    # Anchor row: the smallest-psi bin supplies the per-lag band amplitude.
    terms = delta - delta[0, :][None, :] * pn[:, None]
    include = filled & filled[0, :][None, :]
    if not include.any():
        raise ConfigError(
            "no (distance, lag) cell is populated in both tables alongside "
            "its smallest-distance amplitude cell"
        )
    return float(np.sum(terms[include] ** 2))


def _select(values: np.ndarray, drop_ratio: float) -> int:
    threshold = values.max() / drop_ratio
    for n in range(len(values)):
        if np.all(values[n:] <= threshold):
            return n
    return 0


def m_criterion(
    field: SampledField,
    d: int,
    n_max: int,
    bins: BinSpec | None = None,
    drop_ratio: float = DEFAULT_DROP_RATIO,
) -> OrderReport:
    """Profile M(n) for n = 0..n_max on residual moment tables of ``field``.

    Each order regresses off the harmonics of degree below n, differences
    the residual ``d`` times, and bins its moments; M(n) then compares
    consecutive tables.  Requires at least (n_max + 1)^2 locations so the
    widest regression is identifiable.
    """
    if n_max < 0:
        raise ConfigError(f"n_max must be >= 0, got {n_max}")
    if drop_ratio <= 1.0:
        raise ConfigError(f"drop_ratio must exceed 1, got {drop_ratio}")
    if bins is None:
        bins = BinSpec()
    needed = (n_max + 1) ** 2
    if field.n_locations < needed:
        raise ConfigError(
            f"profiling up to order {n_max} needs at least {needed} locations, "
            f"got {field.n_locations}"
        )
    tables = []
    for n in range(n_max + 2):
        residual = truncate_harmonics(field, n)
        tables.append(mom_estimate(difference_time(residual, d), bins))
    m_values = np.array(
        [m_statistic(tables[n], tables[n + 1], n) for n in range(n_max + 1)]
    )
    with np.errstate(divide="ignore"):
        log_m = np.log(m_values)
    rule = (
        f"smallest n with M(m) <= max(M)/{drop_ratio:g} for every m >= n; "
        "0 when no order qualifies"
    )
    return OrderReport(
        n_values=tuple(range(n_max + 1)),
        M=tuple(float(x) for x in m_values),
        logM=tuple(float(x) for x in log_m),
        kappa_hat=_select(m_values, drop_ratio),
        rule=rule,
    )


def select_kappa(report: OrderReport, drop_ratio: float = DEFAULT_DROP_RATIO) -> int:
    """Re-apply the drop rule to an existing report, possibly at a new ratio."""
    if drop_ratio <= 1.0:
        raise ConfigError(f"drop_ratio must exceed 1, got {drop_ratio}")
    return _select(np.asarray(report.M), drop_ratio)
