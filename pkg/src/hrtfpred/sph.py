"""Real spherical-harmonic basis evaluation and least-squares fitting.

Angles follow the audio convention used throughout this package: azimuth
increases clockwise seen from above (0 = front, +90 deg = right side) and
elevation is 0 on the horizon, +90 deg at the zenith.  Internally the polar
angle theta = pi/2 - elevation is used.

Coefficient vectors are ordered (0,0), (1,-1), (1,0), (1,1), ..., (L,L);
column j of a basis matrix corresponds to (l, m) with j = l*l + l + m.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


class FitRankError(ValueError):
    """Raised when a least-squares system is numerically rank deficient."""

    def __init__(self, cond: float, cond_max: float):
        self.cond = cond
        self.cond_max = cond_max
        super().__init__(
            f"basis matrix condition estimate {cond:.3e} exceeds bound {cond_max:.3e}"
        )


def wrap_azimuth(azimuth):
    """Wrap azimuth(s) into [0, 2*pi)."""
    return np.mod(azimuth, TWO_PI)


@dataclass(frozen=True)
class Direction:
    """A single direction on the sphere, azimuth in [0, 2pi), elevation in [-pi/2, pi/2]."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        if not (math.isfinite(self.azimuth) and math.isfinite(self.elevation)):
            raise ValueError("direction angles must be finite")
        if not -math.pi / 2 - 1e-12 <= self.elevation <= math.pi / 2 + 1e-12:
            raise ValueError(f"elevation {self.elevation} outside [-pi/2, pi/2]")
        object.__setattr__(self, "azimuth", float(wrap_azimuth(self.azimuth)))
        object.__setattr__(
            self, "elevation", float(np.clip(self.elevation, -math.pi / 2, math.pi / 2))
        )

    @property
    def polar(self) -> float:
        """Polar angle theta = pi/2 - elevation, 0 at the zenith."""
        return math.pi / 2 - self.elevation

    def unit_vector(self) -> np.ndarray:
        return np.array(
            [
                math.cos(self.elevation) * math.cos(self.azimuth),
                -math.cos(self.elevation) * math.sin(self.azimuth),
                math.sin(self.elevation),
            ]
        )


@dataclass(frozen=True)
class DirectionSet:
    """Ordered set of directions; the order is stable and preserved by every fit."""

    azimuth: np.ndarray
    elevation: np.ndarray

    def __post_init__(self):
        az = np.atleast_1d(np.asarray(self.azimuth, dtype=float))
        el = np.atleast_1d(np.asarray(self.elevation, dtype=float))
        if az.shape != el.shape or az.ndim != 1:
            raise ValueError("azimuth and elevation must be 1-d arrays of equal length")
        if az.size < 1:
            raise ValueError("a DirectionSet needs at least one direction")
        if not (np.all(np.isfinite(az)) and np.all(np.isfinite(el))):
            raise ValueError("direction angles must be finite")
        if np.any(np.abs(el) > math.pi / 2 + 1e-12):
            raise ValueError("elevations outside [-pi/2, pi/2]")
        object.__setattr__(self, "azimuth", wrap_azimuth(az))
        object.__setattr__(self, "elevation", np.clip(el, -math.pi / 2, math.pi / 2))
        self.azimuth.setflags(write=False)
        self.elevation.setflags(write=False)

    @classmethod
    def from_directions(cls, directions) -> "DirectionSet":
        return cls(
            np.array([d.azimuth for d in directions]),
            np.array([d.elevation for d in directions]),
        )

    def __len__(self) -> int:
        return self.azimuth.size

    def __getitem__(self, i: int) -> Direction:
        return Direction(float(self.azimuth[i]), float(self.elevation[i]))

    @property
    def count(self) -> int:
        return len(self)

    @property
    def polar(self) -> np.ndarray:
        """Polar angles theta = pi/2 - elevation."""
        return math.pi / 2 - self.elevation

    def unit_vectors(self) -> np.ndarray:
        """(S, 3) unit vectors; x front, y left, z up (azimuth clockwise from above)."""
        ce = np.cos(self.elevation)
        return np.stack(
            [ce * np.cos(self.azimuth), -ce * np.sin(self.azimuth), np.sin(self.elevation)],
            axis=1,
        )


def n_coeffs(order: int) -> int:
    return (order + 1) ** 2


def sh_index(l: int, m: int) -> int:
    """Flat column index of (l, m) in the canonical ordering."""
    if abs(m) > l:
        raise ValueError(f"|m|={abs(m)} exceeds l={l}")
    return l * l + l + m


def sh_degree_order(j: int):
    """Inverse of sh_index."""
    l = int(math.isqrt(j))
    return l, j - l * l - l


def assoc_legendre(l: int, m: int, x):
    """Associated Legendre P_l^m(x), Condon-Shortley phase included.

    Stable upward recurrence in l; accepts scalar or array x in [-1, 1].
    Negative m is mapped through P_l^{-m} = (-1)^m (l-m)!/(l+m)! P_l^m.
    """
    if l < 0 or abs(m) > l:
        raise ValueError(f"require 0 <= |m| <= l, got l={l}, m={m}")
    x_arr = np.asarray(x, dtype=float)
    if np.any(np.abs(x_arr) > 1.0 + 1e-15):
        raise ValueError("argument x outside [-1, 1]")
    x_arr = np.clip(x_arr, -1.0, 1.0)
    if m < 0:
        scale = (-1) ** (-m) * math.factorial(l + m) / math.factorial(l - m)
        return scale * assoc_legendre(l, -m, x_arr)

    # P_m^m = (-1)^m (2m-1)!! (1-x^2)^{m/2}, then climb l.
    pmm = np.ones_like(x_arr)
    if m > 0:
        somx2 = np.sqrt(np.maximum(0.0, (1.0 - x_arr) * (1.0 + x_arr)))
        pmm = (-1) ** m * float(_double_factorial(2 * m - 1)) * somx2**m
    if l == m:
        out = pmm
    else:
        pmmp1 = x_arr * (2 * m + 1) * pmm
        if l == m + 1:
            out = pmmp1
        else:
            for ll in range(m + 2, l + 1):
                pmm, pmmp1 = pmmp1, (x_arr * (2 * ll - 1) * pmmp1 - (ll + m - 1) * pmm) / (ll - m)
            out = pmmp1
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


def _double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def _sh_normalization(l: int, m: int) -> float:
    """Orthonormal SH normalization sqrt((2l+1)/(4pi) (l-m)!/(l+m)!)."""
    return math.sqrt(
        (2 * l + 1)
        / (4.0 * math.pi)
        * math.exp(math.lgamma(l - m + 1) - math.lgamma(l + m + 1))
    )


@dataclass(frozen=True)
class ShBasisMatrix:
    """Evaluated real SH basis at a direction set; values has shape (S, (L+1)^2)."""

    order: int
    values: np.ndarray
    direction_set: DirectionSet = field(repr=False)

    def __post_init__(self):
        if self.values.shape != (len(self.direction_set), n_coeffs(self.order)):
            raise ValueError("basis matrix shape does not match order and direction count")
        self.values.setflags(write=False)


@dataclass(frozen=True)
class ShCoefficients:
    """Coefficient vector in canonical (l, m) order, length (L+1)^2."""

    order: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (n_coeffs(self.order),):
            raise ValueError(
                f"coefficient vector must have length {n_coeffs(self.order)}, got {v.shape}"
            )
        object.__setattr__(self, "values", v)
        self.values.setflags(write=False)


def real_sh_basis(order: int, dirs: DirectionSet) -> ShBasisMatrix:
    """Evaluate the orthonormal real SH basis at all directions.

    Entry (i, (l,m)) is N(l,0) P_l^0(cos theta_i) for m = 0 and
    sqrt(2) N(l,|m|) P_l^{|m|}(cos theta_i) cos(m phi_i) (resp. sin(|m| phi_i))
    for m > 0 (resp. m < 0).  The Condon-Shortley phase carried by
    assoc_legendre is compensated here so the columns match the usual
    real-SH tables.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    theta = dirs.polar
    phi = dirs.azimuth
    x = np.cos(theta)
    values = np.empty((len(dirs), n_coeffs(order)))
    for l in range(order + 1):
        for m in range(l + 1):
            plm = assoc_legendre(l, m, x) * (-1) ** m  # cancel Condon-Shortley
            norm = _sh_normalization(l, m)
            if m == 0:
                values[:, sh_index(l, 0)] = norm * plm
            else:
                values[:, sh_index(l, m)] = math.sqrt(2.0) * norm * plm * np.cos(m * phi)
                values[:, sh_index(l, -m)] = math.sqrt(2.0) * norm * plm * np.sin(m * phi)
    return ShBasisMatrix(order, values, dirs)


def least_squares_fit(basis, samples, ridge: float = 0.0, cond_max: float = 1e8):
    """Solve min_c ||f - Y c||_2 by SVD (optionally ridge-regularized).

    `basis` is an (S, N) array with S >= N; `samples` is (S,) or (S, k) for
    k right-hand sides solved against the shared decomposition.  Raises
    FitRankError when the condition estimate s_max/s_min exceeds cond_max.
    """
    y = np.asarray(basis, dtype=float)
    f = np.asarray(samples, dtype=float)
    if y.ndim != 2:
        raise ValueError("basis must be a 2-d matrix")
    s_count, n_count = y.shape
    if s_count < n_count:
        raise ValueError(f"underdetermined fit: {s_count} samples for {n_count} coefficients")
    if f.shape[0] != s_count:
        raise ValueError("sample vector length does not match basis rows")
    if ridge < 0.0:
        raise ValueError("ridge must be >= 0")
    u, sing, vt = np.linalg.svd(y, full_matrices=False)
    cond = float(sing[0] / sing[-1]) if sing[-1] > 0.0 else math.inf
    if cond > cond_max:
        raise FitRankError(cond, cond_max)
    uf = u.T @ f
    if ridge > 0.0:
        filt = sing / (sing**2 + ridge)
    else:
        filt = 1.0 / sing
    return vt.T @ (uf * (filt[:, None] if f.ndim > 1 else filt))


def fit_sh(basis: ShBasisMatrix, samples, **kw) -> ShCoefficients:
    """least_squares_fit against an SH basis, wrapped as ShCoefficients."""
    return ShCoefficients(basis.order, least_squares_fit(basis.values, samples, **kw))


def reconstruct(basis: ShBasisMatrix, coeffs: ShCoefficients) -> np.ndarray:
    """Synthesize sample values f = Y c."""
    if coeffs.order != basis.order:
        raise ValueError(f"order mismatch: basis L={basis.order}, coefficients L={coeffs.order}")
    return basis.values @ coeffs.values


# --- sampling grids ---------------------------------------------------------


def ring_grid(total: int = 440, ring_step_deg: float = 10.0) -> DirectionSet:
    """Near-uniform full-sphere layout of latitude rings, top pole first.

    Rings run from +90 deg elevation down to -90 deg in steps of
    ring_step_deg; both poles carry a single point and the remaining points
    are split across rings proportionally to cos(elevation) (largest
    remainder).  Azimuths sweep a complete circle per ring.
    """
    if total < 3:
        raise ValueError("need at least 3 points")
    n_rings = int(round(180.0 / ring_step_deg)) + 1
    elevations_deg = 90.0 - ring_step_deg * np.arange(n_rings)
    weights = np.cos(np.radians(elevations_deg[1:-1]))
    inner_total = total - 2
    raw = weights / weights.sum() * inner_total
    counts = np.floor(raw).astype(int)
    remainder = inner_total - counts.sum()
    order = np.argsort(raw - counts)[::-1]
    counts[order[:remainder]] += 1
    az, el = [0.0], [math.pi / 2]
    for elev_deg, count in zip(elevations_deg[1:-1], counts):
        ring_az = TWO_PI * np.arange(count) / count
        az.extend(ring_az)
        el.extend([math.radians(elev_deg)] * count)
    az.append(0.0)
    el.append(-math.pi / 2)
    return DirectionSet(np.array(az), np.array(el))


def gauss_legendre_grid(n_polar: int, n_azimuth: int):
    """Product quadrature grid exact for SH products up to degree ~2*n_polar - 1.

    Returns (DirectionSet, weights) with weights summing to 4*pi.
    """
    nodes, gl_weights = np.polynomial.legendre.leggauss(n_polar)
    theta = np.arccos(nodes)
    phi = TWO_PI * np.arange(n_azimuth) / n_azimuth
    th_grid, ph_grid = np.meshgrid(theta, phi, indexing="ij")
    dirs = DirectionSet(ph_grid.ravel(), math.pi / 2 - th_grid.ravel())
    weights = np.repeat(gl_weights, n_azimuth) * (TWO_PI / n_azimuth)
    return dirs, weights


# --- serialization ----------------------------------------------------------

_HEADER = struct.Struct("<I")


def write_coeffs(path, coeffs: ShCoefficients) -> None:
    """Write a coefficient vector: u32 LE order, then f64 LE values in canonical order."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(coeffs.order))
        fh.write(coeffs.values.astype("<f8").tobytes())


def read_coeffs(path) -> ShCoefficients:
    with open(path, "rb") as fh:
        (order,) = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n_coeffs(order):
        raise ValueError(
            f"coefficient file holds {data.size} values, expected {n_coeffs(order)} for order {order}"
        )
    return ShCoefficients(order, data.astype(float))
