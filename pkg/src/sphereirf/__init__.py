"""Intrinsic random fields on the sphere across time.

Simulation, moment estimation, least-squares fitting, and truncation-order
selection for spatio-temporal Gaussian fields whose low-degree harmonic band
is removed and whose time axis may be integrated.
"""

from .errors import ConfigError, NumericalError
from .estimate import (
    BinSpec,
    FitResult,
    MoMTable,
    fit,
    loss,
    mom_estimate,
    theoretical_table,
)
from .kernels import (
    Family,
    IntrinsicSpec,
    ModelSpec,
    band_coefficient,
    default_anchors,
    full_covariance,
    icf_value,
    integrated_block,
    nil_space_basis,
    phi0_closed,
    phi0_series_oracle,
)
from .selection import (
    OrderReport,
    m_criterion,
    m_statistic,
    select_kappa,
)
from .simulate import (
    GridSpec,
    SampledField,
    Sampling,
    assemble_covariance,
    difference_time,
    sample_gaussian,
    sample_locations,
    simulate_irf,
    truncate_harmonics,
)
from .sphere import (
    DEGREE_CAP,
    HarmonicIndex,
    NORTH_POLE,
    SpherePoint,
    assoc_legendre_normalized,
    gauss_legendre_nodes,
    great_circle,
    harmonic_basis,
    harmonic_indices,
    legendre_p,
    legendre_p_sequence,
    real_spherical_harmonic,
)

__all__ = [
    "ConfigError",
    "NumericalError",
    "DEGREE_CAP",
    "HarmonicIndex",
    "NORTH_POLE",
    "SpherePoint",
    "assoc_legendre_normalized",
    "gauss_legendre_nodes",
    "great_circle",
    "harmonic_basis",
    "harmonic_indices",
    "legendre_p",
    "legendre_p_sequence",
    "real_spherical_harmonic",
    "Family",
    "IntrinsicSpec",
    "ModelSpec",
    "band_coefficient",
    "default_anchors",
    "full_covariance",
    "icf_value",
    "integrated_block",
    "nil_space_basis",
    "phi0_closed",
    "phi0_series_oracle",
    "GridSpec",
    "SampledField",
    "Sampling",
    "assemble_covariance",
    "difference_time",
    "sample_gaussian",
    "sample_locations",
    "simulate_irf",
    "truncate_harmonics",
    "BinSpec",
    "FitResult",
    "MoMTable",
    "fit",
    "loss",
    "mom_estimate",
    "theoretical_table",
    "OrderReport",
    "m_criterion",
    "m_statistic",
    "select_kappa",
]

__version__ = "0.1.0"
