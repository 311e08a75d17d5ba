"""Covariance kernels for intrinsic random fields on the sphere across time.

A stationary base kernel phi0(psi, h) from one of seven closed-form families
is turned into the kernel of a process whose harmonic degrees below kappa are
removed and whose time axis is differenced d times.  The removed band is
restored through a nil-space basis pinned at anchor points, which yields the
full non-stationary covariance R((P, t), (Q, s)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from .errors import ConfigError, NumericalError
from .sphere import (
    NORTH_POLE,
    SpherePoint,
    gauss_legendre_nodes,
    great_circle,
    harmonic_basis,
    legendre_p_sequence,
)

FOUR_PI = 4.0 * math.pi

# Default weight attached to each anchor functional: the value of the constant
# harmonic, so the kappa = 1 pinning matches the scale of the removed band.
DEFAULT_GAMMA_NU = 1.0 / (2.0 * math.sqrt(math.pi))

# Anchor evaluation matrices with condition numbers above this are rejected.
ANCHOR_COND_LIMIT = 1.0e12

# Nodes used when a family's low-degree coefficients need quadrature.
_BAND_QUAD_NODES = 128


class Family(str, Enum):
    """Closed-form stationary kernel families."""

    GENERATING_FUNCTION = "generating_function"
    NEGATIVE_BINOMIAL = "negative_binomial"
    MULTIQUADRIC = "multiquadric"
    SINE_SERIES = "sine_series"
    SINE_POWER = "sine_power"
    ADAPTED_MULTIQUADRIC = "adapted_multiquadric"
    POISSON = "poisson"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).replace("-", "_").replace(" ", "_").lower()
        compact = key.replace("_", "")
        for fam in cls:
            if key == fam.value or compact == fam.value.replace("_", ""):
                return fam
        raise ConfigError(
            f"unknown family {name!r}; expected one of "
            + ", ".join(f.value for f in cls)
        )


# Families whose closed form takes a shape parameter, with its default.
_SHAPE_DEFAULTS = {
    Family.NEGATIVE_BINOMIAL: 1.0,
    Family.MULTIQUADRIC: 1.0,
    Family.SINE_POWER: 1.0,
    Family.ADAPTED_MULTIQUADRIC: 1.0,
    Family.POISSON: 1.0,
}


@dataclass(frozen=True)
class ModelSpec:
    """Parameters of one stationary family.

    Parameters
    ----------
    family : Family
        Which closed form to use.
    alpha : float
        Spatial decay weight, in (0, 1).
    beta : float
        Temporal decay rate, > 0.
    gamma : float
        Scale inside the closed form, > 0 (default 1).
    shape : float, optional
        Family shape parameter (tau, eta, or lambda); defaults to 1 where the
        family takes one and must stay unset otherwise.
    """

    family: Family
    alpha: float
    beta: float
    gamma: float = 1.0
    shape: float | None = None

    def __post_init__(self):
        fam = Family.parse(self.family)
        object.__setattr__(self, "family", fam)
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha = {self.alpha!r} must lie in (0, 1)")
        if not (self.beta > 0.0):
            raise ConfigError(f"beta = {self.beta!r} must be > 0")
        if not (self.gamma > 0.0):
            raise ConfigError(f"gamma = {self.gamma!r} must be > 0")
        if fam in _SHAPE_DEFAULTS:
            shape = _SHAPE_DEFAULTS[fam] if self.shape is None else float(self.shape)
            object.__setattr__(self, "shape", shape)
            self._check_shape(fam, shape)
        elif self.shape is not None:
            raise ConfigError(f"family {fam.value} takes no shape parameter")

    def _check_shape(self, fam, shape):
        if fam is Family.SINE_POWER:
            if not (0.0 < shape <= 2.0):
                raise ConfigError(f"sine_power shape eta = {shape!r} not in (0, 2]")
        elif not (shape > 0.0):
            raise ConfigError(f"{fam.value} shape = {shape!r} must be > 0")

    def to_dict(self):
        out = {
            "family": self.family.value,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
        }
        if self.family in _SHAPE_DEFAULTS:
            out["shape"] = self.shape
        return out

    @classmethod
    def from_dict(cls, raw):
        allowed = {"family", "alpha", "beta", "gamma", "shape"}
        unknown = set(raw) - allowed
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        if "family" not in raw:
            raise ConfigError("model requires a 'family' entry")
        for key in ("alpha", "beta"):
            if key not in raw:
                raise ConfigError(f"model requires {key!r}")
        return cls(
            family=Family.parse(raw["family"]),
            alpha=float(raw["alpha"]),
            beta=float(raw["beta"]),
            gamma=float(raw.get("gamma", 1.0)),
            shape=None if raw.get("shape") is None else float(raw["shape"]),
        )


def temporal_g(beta, h):
    """Temporal decay factor g(h) = exp(-beta * |h|)."""
    out = np.exp(-beta * np.abs(np.asarray(h, dtype=float)))
    return float(out) if np.ndim(h) == 0 else out


def a_ell(model, ell, h):
    """Degree-l temporal coefficient alpha**l * g(h)**l; identically 1 at l = 0."""
    h_arr = np.asarray(h, dtype=float)
    if ell == 0:
        out = np.ones_like(h_arr)
    else:
        out = model.alpha**ell * np.exp(-ell * model.beta * np.abs(h_arr))
    return float(out) if np.ndim(h) == 0 else out


def _check_psi(psi):
    psi = np.asarray(psi, dtype=float)
    if np.any(psi < -1e-9) or np.any(psi > math.pi + 1e-9):
        raise ValueError("psi must lie in [0, pi]")
    return np.clip(psi, 0.0, math.pi)


def phi0_closed(model, psi, h):
    """Stationary base kernel phi0(psi, h) in closed form.

    Parameters
    ----------
    model : ModelSpec
    psi : float or ndarray
        Central angle(s) in [0, pi].
    h : float or ndarray
        Time lag(s); only |h| enters. Broadcast against psi.

    Returns
    -------
    float or ndarray
    """
    psi = _check_psi(psi)
    h = np.asarray(h, dtype=float)
    scalar = psi.ndim == 0 and h.ndim == 0
    c = np.cos(psi)
    g = np.exp(-model.beta * np.abs(h))
    rho = model.alpha * g
    gam = model.gamma
    fam = model.family
    if fam is Family.GENERATING_FUNCTION:
        out = gam / FOUR_PI * (1.0 - rho**2) / (1.0 - 2.0 * rho * c + rho**2) ** 1.5
    elif fam is Family.NEGATIVE_BINOMIAL:
        out = gam / FOUR_PI * ((1.0 - model.alpha) / (1.0 - rho * c)) ** model.shape
    elif fam is Family.MULTIQUADRIC:
        out = (
            gam / FOUR_PI
            * (1.0 - model.alpha) ** (2.0 * model.shape)
            / (1.0 + model.alpha**2 - 2.0 * rho * c) ** model.shape
        )
    elif fam is Family.SINE_SERIES:
        out = gam / FOUR_PI * np.exp(rho * c - 1.0) * (1.0 + rho * c) / 2.0
    elif fam is Family.SINE_POWER:
        # Power sits on the inner factor; with it outside the brace the
        # expansion picks up negative Legendre coefficients and the kernel
        # stops being positive semidefinite.
        out = (
            gam / FOUR_PI
            * (1.0 - 2.0 ** (-model.shape) * (1.0 - rho * c) ** (model.shape / 2.0))
        )
    elif fam is Family.ADAPTED_MULTIQUADRIC:
        g2 = g * g
        out = (
            gam / FOUR_PI
            * (
                (1.0 + model.alpha * g2) * (1.0 - model.alpha)
                / (1.0 + model.alpha**2 * g2 - 2.0 * rho * c)
            ) ** model.shape
        )
    else:  # Family.POISSON: bare exponential, no 1/(4 pi) factor
        out = gam * np.exp(model.shape * (rho * c - 1.0))
    return float(out) if scalar else out


def phi0_series_oracle(model, psi, h, n_terms=2000):
    """Partial-sum reference for the generating_function family.

    Evaluates gamma * sum_{l=0}^{n_terms} (2l+1)/(4 pi) * alpha**l * g(h)**l
    * P_l(cos psi).  The dropped tail is bounded by
    gamma * rho**(L+1) * ((2L+3) - (2L+1) rho) / (4 pi (1 - rho)**2)
    with rho = alpha * g(h) and L = n_terms, so n_terms = 2000 puts it far
    below 1e-12 for alpha <= 0.95.

    Only the generating_function family has these geometric coefficients; for
    other families this series is not their expansion.
    """
    psi = _check_psi(psi)
    h = np.asarray(h, dtype=float)
    scalar = psi.ndim == 0 and h.ndim == 0
    psi_b, h_b = np.broadcast_arrays(np.atleast_1d(psi), np.atleast_1d(h))
    seq = legendre_p_sequence(n_terms, np.cos(psi_b))
    ells = np.arange(n_terms + 1)
    rho = model.alpha * np.exp(-model.beta * np.abs(h_b))
    coeff = (2 * ells + 1)[:, None] / FOUR_PI * rho.ravel()[None, :] ** ells[:, None]
    out = np.einsum("lk,lk->k", coeff, seq.reshape(n_terms + 1, -1)) * model.gamma
    out = out.reshape(psi_b.shape)
    return float(out[0]) if scalar else out.reshape(np.broadcast(psi, h).shape)


@lru_cache(maxsize=100_000)
def _band_coefficient_quad(model, ell, habs):
    """Degree-l coefficient of phi0 by Gauss-Legendre quadrature in cos(psi)."""
    x, w = gauss_legendre_nodes(_BAND_QUAD_NODES)
    pl = legendre_p_sequence(ell, x)[ell]
    vals = phi0_closed(model, np.arccos(x), habs)
    return 2.0 * math.pi * float(np.sum(w * pl * vals))


def band_coefficient(model, ell, h):
    """Coefficient b_l(h) in phi0(psi, h) = sum_l (2l+1)/(4 pi) b_l(h) P_l(cos psi).

    The generating_function family has the exact geometric form
    gamma * alpha**l * g(h)**l; every other family is integrated numerically
    against P_l (the quadrature is exact to roundoff for these smooth kernels).
    """
    if model.family is Family.GENERATING_FUNCTION:
        return float(model.gamma * a_ell(model, ell, h))
    return _band_coefficient_quad(model, ell, float(abs(h)))


def icf_core(model, kappa, psi, h):
    """Truncated kernel at unit scale: phi0 with degrees < kappa removed.

    phi0(psi, h) - sum_{l < kappa} (2l+1)/(4 pi) b_l(h) P_l(cos psi), where
    b_l are the family's own low-degree coefficients, so the result has no
    spectral content below kappa.

    h must be a scalar; psi may be an array.
    """
    val = phi0_closed(model, psi, h)
    if kappa == 0:
        return val
    pl = legendre_p_sequence(kappa - 1, np.cos(_check_psi(psi)))
    for ell in range(kappa):
        val = val - (2 * ell + 1) / FOUR_PI * band_coefficient(model, ell, h) * pl[ell]
    return val


def icf_value(model, psi, h, kappa, gamma0=1.0):
    """Intrinsic covariance function gamma0 * [phi0 - low-degree band].

    Parameters
    ----------
    model : ModelSpec
    psi : float or ndarray
        Central angle(s) in [0, pi].
    h : float or ndarray
        Integer time lag(s).
    kappa : int
        Number of removed degrees (>= 0).
    gamma0 : float
        Scale applied once to the bracket.

    Returns
    -------
    float or ndarray
    """
    if kappa < 0:
        raise ConfigError(f"kappa = {kappa} must be >= 0")
    psi_arr = np.asarray(psi, dtype=float)
    h_arr = np.asarray(h, dtype=float)
    scalar = psi_arr.ndim == 0 and h_arr.ndim == 0
    psi_b, h_b = np.broadcast_arrays(np.atleast_1d(psi_arr), np.atleast_1d(h_arr))
    out = np.empty(psi_b.shape)
    for hval in np.unique(h_b):
        mask = h_b == hval
        out[mask] = icf_core(model, kappa, psi_b[mask], float(hval))
    out = gamma0 * out
    return float(out[0]) if scalar else out.reshape(np.broadcast(psi_arr, h_arr).shape)


# ---------------------------------------------------------------------------
# Intrinsic structure: removed band, differencing order, anchors
# ---------------------------------------------------------------------------

def default_anchors(kappa):
    """Anchor points pinning the removed band: pole for kappa = 1, a
    tetrahedral spread for kappa = 2."""
    if kappa == 0:
        return ()
    if kappa == 1:
        return (NORTH_POLE,)
    if kappa == 2:
        lat = -math.asin(1.0 / 3.0)
        return (
            NORTH_POLE,
            SpherePoint(0.0, lat),
            SpherePoint(2.0 * math.pi / 3.0, lat),
            SpherePoint(4.0 * math.pi / 3.0, lat),
        )
    raise ConfigError(
        f"no default anchors for kappa = {kappa}; pass kappa**2 = {kappa**2} "
        "explicit anchor points"
    )


def nil_space_basis(anchors, kappa):
    """Coefficients of the cardinal basis of the removed band at the anchors.

    Solves for C such that q_nu = sum_j C[nu, j] Y_j (harmonics with degree
    < kappa, ordered by degree then order) satisfies q_nu(anchor_mu) =
    delta_{nu mu}.

    Returns
    -------
    ndarray
        Shape (kappa**2, kappa**2); row nu holds the coefficients of q_nu.

    Raises
    ------
    NumericalError
        If the anchor evaluation matrix has condition number above
        ANCHOR_COND_LIMIT (degenerate anchor placement).
    """
    n = kappa * kappa
    if len(anchors) != n:
        raise ConfigError(f"kappa = {kappa} needs {n} anchors, got {len(anchors)}")
    lons = np.array([p.lon for p in anchors])
    lats = np.array([p.lat for p in anchors])
    evals = harmonic_basis(kappa, lons, lats).T  # (n anchors, n harmonics)
    cond = np.linalg.cond(evals)
    if not np.isfinite(cond) or cond > ANCHOR_COND_LIMIT:
        raise NumericalError(
            f"anchor evaluation matrix is singular (cond = {cond:.3e}); "
            "choose anchors that are not on a common low-degree zero set"
        )
    coeffs = np.linalg.solve(evals, np.eye(n)).T
    check = coeffs @ evals.T
    if not np.allclose(check, np.eye(n), atol=1e-10):
        raise NumericalError("cardinal basis failed its delta property")
    return coeffs


@dataclass(eq=False)
class IntrinsicSpec:
    """Removed-band order, differencing order, scale, and anchor layout.

    Build through :meth:`build`, which fills default anchors and weights and
    precomputes the cardinal nil-space basis.
    """

    kappa: int
    d: int
    gamma0: float = 1.0
    anchors: tuple = ()
    gamma_nu: tuple = ()
    basis: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kappa < 0:
            raise ConfigError(f"kappa = {self.kappa} must be >= 0")
        if self.d not in (0, 1):
            raise ConfigError(f"d = {self.d} unsupported; only 0 and 1")
        if not (self.gamma0 > 0.0):
            raise ConfigError(f"gamma0 = {self.gamma0!r} must be > 0")
        n = self.kappa**2
        if len(self.anchors) != n:
            raise ConfigError(f"expected {n} anchors, got {len(self.anchors)}")
        if len(self.gamma_nu) != n:
            raise ConfigError(f"expected {n} anchor weights, got {len(self.gamma_nu)}")
        if any(not (g > 0.0) for g in self.gamma_nu):
            raise ConfigError("anchor weights gamma_nu must be > 0")
        for i in range(n):
            for j in range(i + 1, n):
                if great_circle(self.anchors[i], self.anchors[j]) <= 1e-9:
                    raise ConfigError(f"anchors {i} and {j} coincide")
        if self.kappa > 0 and self.basis is None:
            self.basis = nil_space_basis(self.anchors, self.kappa)

    @classmethod
    def build(cls, kappa, d, gamma0=1.0, anchors=None, gamma_nu=None):
        if anchors is None:
            anchors = default_anchors(kappa)
        anchors = tuple(anchors)
        if gamma_nu is None:
            gamma_nu = (DEFAULT_GAMMA_NU,) * len(anchors)
        return cls(
            kappa=int(kappa),
            d=int(d),
            gamma0=float(gamma0),
            anchors=anchors,
            gamma_nu=tuple(float(g) for g in gamma_nu),
        )

    def nil_values(self, lons, lats):
        """Evaluate the cardinal functions q_nu at points: shape (kappa**2, n)."""
        if self.kappa == 0:
            return np.zeros((0, np.size(lons)))
        return self.basis @ harmonic_basis(self.kappa, lons, lats)

    def to_dict(self):
        return {
            "kappa": self.kappa,
            "d": self.d,
            "gamma0": self.gamma0,
            "anchors": [
                {"lon_deg": math.degrees(p.lon), "lat_deg": math.degrees(p.lat)}
                for p in self.anchors
            ],
            "gamma_nu": list(self.gamma_nu),
        }

    @classmethod
    def from_dict(cls, raw):
        allowed = {"kappa", "d", "gamma0", "anchors", "gamma_nu"}
        unknown = set(raw) - allowed
        if unknown:
            raise ConfigError(f"unknown intrinsic keys: {sorted(unknown)}")
        if "kappa" not in raw or "d" not in raw:
            raise ConfigError("intrinsic requires 'kappa' and 'd'")
        anchors = None
        if raw.get("anchors") is not None:
            anchors = []
            for entry in raw["anchors"]:
                extra = set(entry) - {"lon_deg", "lat_deg"}
                if extra:
                    raise ConfigError(f"unknown anchor keys: {sorted(extra)}")
                anchors.append(
                    SpherePoint.from_degrees(entry["lon_deg"], entry["lat_deg"])
                )
        return cls.build(
            kappa=int(raw["kappa"]),
            d=int(raw["d"]),
            gamma0=float(raw.get("gamma0", 1.0)),
            anchors=anchors,
            gamma_nu=raw.get("gamma_nu"),
        )


# ---------------------------------------------------------------------------
# Integrated blocks and the full covariance
# ---------------------------------------------------------------------------

def _lag_counts(t, s):
    """Number of (u, v) in [1, t] x [1, s] with u - v = h, for each h."""
    hs = np.arange(1 - s, t)
    counts = np.minimum(t, s + hs) - np.maximum(1, 1 + hs) + 1
    return hs, counts


def integrated_block(model, intrinsic, psi, t, s):
    """Truncated kernel between integer times t and s at one separation psi.

    For d = 0 this is the stationary icf_core(psi, t - s).  For d = 1 the
    process is the cumulative sum of stationary increments anchored at time 0,
    so the value is sum_{u=1}^{t} sum_{v=1}^{s} icf_core(psi, u - v); it
    vanishes when t = 0 or s = 0.  gamma0 is not applied here.
    """
    t, s = int(t), int(s)
    if t < 0 or s < 0:
        raise ConfigError("times must be non-negative integers")
    if intrinsic.d == 0:
        return float(icf_core(model, intrinsic.kappa, psi, float(t - s)))
    if t == 0 or s == 0:
        return 0.0
    hs, counts = _lag_counts(t, s)
    total = 0.0
    for hval, cnt in zip(hs, counts):
        total += cnt * icf_core(model, intrinsic.kappa, psi, float(hval))
    return float(total)


def full_covariance(model, intrinsic, p, q, t, s):
    """Covariance R((P, t), (Q, s)) of the reconstructed field.

    Combines the truncated kernel with the anchor-pinned nil-space terms:
    gamma0**2 * B(P, Q) + sum_{nu, mu} gamma_nu gamma_mu B(tau_nu, tau_mu)
    q_nu(P) q_mu(Q) + sum_nu gamma_nu**2 q_nu(P) q_nu(Q)
    - sum_nu gamma0 gamma_nu [B(Q, tau_nu) q_nu(P) + B(P, tau_nu) q_nu(Q)],
    with B the integrated block at (t, s).
    """
    g0 = intrinsic.gamma0
    val = g0 * g0 * integrated_block(model, intrinsic, great_circle(p, q), t, s)
    if intrinsic.kappa == 0:
        return float(val)
    qs = intrinsic.nil_values(
        np.array([p.lon, q.lon]), np.array([p.lat, q.lat])
    )
    qp, qq = qs[:, 0], qs[:, 1]
    gnu = np.asarray(intrinsic.gamma_nu)
    n = intrinsic.kappa**2
    for nu in range(n):
        for mu in range(n):
            psi_nm = great_circle(intrinsic.anchors[nu], intrinsic.anchors[mu])
            val += (
                gnu[nu] * gnu[mu]
                * integrated_block(model, intrinsic, psi_nm, t, s)
                * qp[nu] * qq[mu]
            )
    val += float(np.sum(gnu**2 * qp * qq))
    for nu in range(n):
        psi_qa = great_circle(q, intrinsic.anchors[nu])
        psi_pa = great_circle(p, intrinsic.anchors[nu])
        val -= g0 * gnu[nu] * (
            integrated_block(model, intrinsic, psi_qa, t, s) * qp[nu]
            + integrated_block(model, intrinsic, psi_pa, t, s) * qq[nu]
        )
    return float(val)
