"""Geometry and special functions on the unit sphere.

Conventions: longitude in [0, 2*pi), latitude in [-pi/2, pi/2], both radians.
Real spherical harmonics are fully normalized (orthonormal under the surface
measure) and carry no Condon-Shortley phase; the Legendre argument is
sin(latitude), i.e. the cosine of the colatitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError

# Hard ceiling on harmonic degree; recurrences are overflow-free up to here.
DEGREE_CAP = 4096

# |x| may exceed 1 by at most this much before it is a domain error.
DOMAIN_SLACK = 1.0e-12

# Maximum number of quadrature nodes handed out by gauss_legendre_nodes.
MAX_QUAD_NODES = 1024

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SpherePoint:
    """A point on the unit sphere, (longitude, latitude) in radians.

    Longitude is wrapped into [0, 2*pi); latitude must lie in
    [-pi/2, pi/2] up to roundoff slack.
    """

    lon: float
    lat: float

    def __post_init__(self):
        lat = float(self.lat)
        if not math.isfinite(self.lat) or not math.isfinite(self.lon):
            raise ConfigError("SpherePoint coordinates must be finite")
        if abs(lat) > math.pi / 2 + DOMAIN_SLACK:
            raise ConfigError(
                f"latitude {lat!r} outside [-pi/2, pi/2]"
            )
        lat = min(max(lat, -math.pi / 2), math.pi / 2)
        lon = float(self.lon) % TWO_PI
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "lat", lat)

    @classmethod
    def from_degrees(cls, lon_deg, lat_deg):
        return cls(math.radians(lon_deg), math.radians(lat_deg))


NORTH_POLE = SpherePoint(0.0, math.pi / 2)


@dataclass(frozen=True)
class HarmonicIndex:
    """Degree/order pair (l, m) with |m| <= l."""

    degree: int
    order: int

    def __post_init__(self):
        if self.degree < 0:
            raise ConfigError(f"harmonic degree {self.degree} must be >= 0")
        if abs(self.order) > self.degree:
            raise ConfigError(
                f"harmonic order {self.order} exceeds degree {self.degree}"
            )


def harmonic_indices(max_degree):
    """All (l, m) with l < max_degree, ordered by degree then order.

    Returns a list of HarmonicIndex of length max_degree**2.
    """
    out = []
    for ell in range(max_degree):
        for m in range(-ell, ell + 1):
            out.append(HarmonicIndex(ell, m))
    return out


def _check_degree(degree):
    if degree < 0:
        raise ConfigError(f"degree {degree} must be >= 0")
    if degree > DEGREE_CAP:
        raise ConfigError(
            f"degree {degree} exceeds the cap {DEGREE_CAP}; raise DEGREE_CAP "
            "deliberately rather than truncating"
        )


def _clamp_abscissa(x):
    """Validate |x| <= 1 up to slack, clamp the slack away."""
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + DOMAIN_SLACK):
        bad = float(np.max(np.abs(x)))
        raise ValueError(f"Legendre argument |x| = {bad!r} exceeds 1")
    return np.clip(x, -1.0, 1.0)


def legendre_p_sequence(max_degree, x):
    """Legendre polynomials P_0(x) .. P_max_degree(x) by the three-term recurrence.

    Parameters
    ----------
    max_degree : int
        Highest degree to return; at most DEGREE_CAP.
    x : float or ndarray
        Abscissa(e) in [-1, 1].

    Returns
    -------
    ndarray
        Shape (max_degree + 1,) + shape(x); row l holds P_l(x).
    """
    _check_degree(max_degree)
    x = _clamp_abscissa(x)
    out = np.empty((max_degree + 1,) + x.shape)
    out[0] = 1.0
    if max_degree == 0:
        return out
    out[1] = x
    for ell in range(1, max_degree):
        out[ell + 1] = ((2 * ell + 1) * x * out[ell] - ell * out[ell - 1]) / (ell + 1)
    return out


def legendre_p(degree, x):
    """P_degree(x); scalar in, scalar out (arrays broadcast through)."""
    seq = legendre_p_sequence(degree, x)
    val = seq[degree]
    if np.ndim(x) == 0:
        return float(val)
    return val


def assoc_legendre_normalized(degree, order, x):
    """Fully normalized associated Legendre function, no Condon-Shortley phase.

    Computes Nbar_l^m(x) = sqrt((2l+1)/(4*pi) * (l-m)!/(l+m)!) * P_l^m(x)
    through the stable normalized recurrence (no raw factorials), so values
    stay bounded for degrees up to DEGREE_CAP.

    Parameters
    ----------
    degree, order : int
        Degree l and order m with 0 <= m <= l.
    x : float or ndarray
        Abscissa(e) in [-1, 1].

    Returns
    -------
    float or ndarray
    """
    _check_degree(degree)
    if order < 0 or order > degree:
        raise ValueError(f"order {order} outside [0, degree={degree}]")
    x = _clamp_abscissa(x)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)

    # Diagonal: Nbar_m^m = sqrt((2m+1)/(2m)) * sqrt(1-x^2) * Nbar_{m-1}^{m-1}.
    val = np.full_like(x, 1.0 / math.sqrt(4.0 * math.pi))
    if order > 0:
        sx = np.sqrt((1.0 - x) * (1.0 + x))
        for m in range(1, order + 1):
            val = math.sqrt((2 * m + 1) / (2.0 * m)) * sx * val
    if degree == order:
        return float(val[0]) if scalar else val

    # First off-diagonal step, then the three-term recurrence in degree.
    prev = val
    val = math.sqrt(2 * order + 3) * x * prev
    for ell in range(order + 2, degree + 1):
        a = math.sqrt((4.0 * ell * ell - 1.0) / (ell * ell - order * order))
        b = math.sqrt(
            ((ell - 1.0) ** 2 - order * order) / (4.0 * (ell - 1.0) ** 2 - 1.0)
        )
        val, prev = a * (x * val - b * prev), val
    return float(val[0]) if scalar else val


def real_spherical_harmonic(index, point):
    """Real orthonormal spherical harmonic Y_l^m at a point.

    For m > 0 the longitude factor is sqrt(2) * cos(m * lon), for m < 0 it is
    sqrt(2) * sin(|m| * lon); m = 0 has no longitude dependence.
    """
    ell, m = index.degree, index.order
    x = math.sin(point.lat)
    base = assoc_legendre_normalized(ell, abs(m), x)
    if m == 0:
        return float(base)
    if m > 0:
        return float(math.sqrt(2.0) * base * math.cos(m * point.lon))
    return float(math.sqrt(2.0) * base * math.sin(-m * point.lon))


def harmonic_basis(max_degree, lons, lats):
    """Design matrix of all harmonics with degree < max_degree.

    Parameters
    ----------
    max_degree : int
        Number of bands; rows cover l = 0 .. max_degree - 1, m = -l .. l.
    lons, lats : ndarray
        Coordinates in radians, shape (n,).

    Returns
    -------
    ndarray
        Shape (max_degree**2, n); row order matches harmonic_indices.
    """
    lons = np.asarray(lons, dtype=float)
    lats = np.asarray(lats, dtype=float)
    x = np.sin(lats)
    rows = []
    for ell in range(max_degree):
        for m in range(-ell, ell + 1):
            base = assoc_legendre_normalized(ell, abs(m), x)
            if m == 0:
                rows.append(base)
            elif m > 0:
                rows.append(math.sqrt(2.0) * base * np.cos(m * lons))
            else:
                rows.append(math.sqrt(2.0) * base * np.sin(-m * lons))
    return np.array(rows).reshape(max_degree * max_degree, -1)


def great_circle_array(lon1, lat1, lon2, lat2):
    """Central angle between two coordinate arrays (radians), broadcasting.

    Uses the arctan2 form, which is accurate at both small and antipodal
    separations and returns exactly 0.0 for identical inputs.
    """
    dlon = np.asarray(lon2, dtype=float) - np.asarray(lon1, dtype=float)
    c1, s1 = np.cos(lat1), np.sin(lat1)
    c2, s2 = np.cos(lat2), np.sin(lat2)
    cd, sd = np.cos(dlon), np.sin(dlon)
    num = np.hypot(c2 * sd, c1 * s2 - s1 * c2 * cd)
    den = s1 * s2 + c1 * c2 * cd
    return np.arctan2(num, den)


def great_circle(p, q):
    """Central angle in [0, pi] between two SpherePoints."""
    return float(great_circle_array(p.lon, p.lat, q.lon, q.lat))


def great_circle_matrix(lons, lats, lons2=None, lats2=None):
    """Pairwise central angles; (n, n) on one set or (n, m) across two sets."""
    lons = np.asarray(lons, dtype=float)
    lats = np.asarray(lats, dtype=float)
    if lons2 is None:
        lons2, lats2 = lons, lats
    else:
        lons2 = np.asarray(lons2, dtype=float)
        lats2 = np.asarray(lats2, dtype=float)
    return great_circle_array(
        lons[:, None], lats[:, None], lons2[None, :], lats2[None, :]
    )


@lru_cache(maxsize=32)
def gauss_legendre_nodes(n):
    """Gauss-Legendre nodes and weights on [-1, 1].

    Nodes are the Newton-iterated roots of P_n; weights are
    2 / ((1 - x^2) * P_n'(x)^2). Exact for polynomials of degree 2n - 1.

    Returns
    -------
    (ndarray, ndarray)
        Nodes ascending in (-1, 1) and the matching weights (sum = 2).
    """
    if n < 1 or n > MAX_QUAD_NODES:
        raise ConfigError(f"node count {n} outside [1, {MAX_QUAD_NODES}]")
    i = np.arange(n)
    x = np.cos(math.pi * (i + 0.75) / (n + 0.5))
    for _ in range(100):
        seq = legendre_p_sequence(n, x)
        dp = n * (x * seq[n] - seq[n - 1]) / (x * x - 1.0)
        step = seq[n] / dp
        x = x - step
        if np.max(np.abs(step)) < 1.0e-15:
            break
    seq = legendre_p_sequence(n, x)
    dp = n * (x * seq[n] - seq[n - 1]) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    nodes, weights = x[order], w[order]
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights
