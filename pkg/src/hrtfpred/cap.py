"""Spherical cap harmonic analysis.

Cap harmonics are Legendre functions of real (non-integer) degree whose
degrees are eigenvalues of boundary conditions at the cap rim theta_c:
dP/dtheta = 0 when (k - m) is even, P = 0 when (k - m) is odd (both Haines
families).  Degrees are found by a bracketing scan plus bisection, and the
basis uses the same canonical (k, m) column layout as the full-sphere SH
basis.

Real-degree Legendre evaluation: a 2F1 series about x = 1 seeds the ladder
at fractional degree in [m-1, m+1) -- where the series is sign-stable -- and
the standard three-term recurrence climbs to the target degree.  The series
alone cancels catastrophically in float64 once degree * sqrt((1-x)/2)
exceeds ~18, which the eigen-degrees here routinely do, so the ladder is
load-bearing, not an optimization.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .sph import DirectionSet, least_squares_fit, n_coeffs, sh_index

DERIVATIVE = "derivative"
VALUE = "value"


class SeriesError(RuntimeError):
    """Hypergeometric series failed to converge within the iteration cap."""


class RootBracketError(RuntimeError):
    """Degree scan exhausted its range without bracketing the requested root."""


class DirectionOutsideCapError(ValueError):
    """A direction lies outside the spherical cap of the basis."""


@dataclass(frozen=True)
class CapSpec:
    """Cap half-cone angle (radians) and maximum degree index K."""

    half_cone_angle: float
    max_degree_index: int

    def __post_init__(self):
        if not 0.0 < self.half_cone_angle <= math.pi / 2:
            raise ValueError("half cone angle must lie in (0, pi/2]")
        if self.max_degree_index < 0:
            raise ValueError("max degree index must be >= 0")


def _hyp2f1(a, b, c, z, tol=1e-15, max_terms=600):
    """2F1(a, b; c; z) by direct summation; a, b may be arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    term = np.ones(np.broadcast(a, b).shape)
    total = term.copy()
    for n in range(max_terms):
        term = term * (a + n) * (b + n) / ((c + n) * (n + 1)) * z
        total = total + term
        if np.all(np.abs(term) <= tol * np.maximum(np.abs(total), 1e-300)):
            return total
    raise SeriesError(f"2F1 series did not reach tol={tol} in {max_terms} terms")


def _scaled_seed(nu, m, x, tol=1e-15):
    """Scaled Legendre S_nu^m(x) = P_nu^m(x) / ((-1)^m (2m-1)!!).

    Valid for fractional nu with nu - m in (-1, 2); this is the sign-stable
    regime of the 2F1 series about x = 1.  x may be an array in (-1, 1].
    """
    nu = np.asarray(nu, dtype=float)
    x = np.asarray(x, dtype=float)
    z = 0.5 * (1.0 - x)
    arg = nu - m + 1.0
    log_rho = np.where(
        arg > 0.0,
        _lgamma_arr(nu + m + 1.0) - _lgamma_arr(np.maximum(arg, 1e-300)) - math.lgamma(2 * m + 1),
        -np.inf,
    )
    rho = np.exp(log_rho)
    front = (np.maximum(0.0, (1.0 - x) * (1.0 + x))) ** (m / 2.0)
    return rho * front * _hyp2f1(m - nu, nu + m + 1.0, m + 1.0, z, tol=tol)


def _lgamma_arr(v):
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    flat = v.ravel()
    res = out.ravel()
    for i, val in enumerate(flat):
        res[i] = math.lgamma(val) if val > 0.0 else math.inf
    return out


def _ladder_pair(l: float, m: int, x):
    """(S_{l-1}^m(x), S_l^m(x)) for real degree l >= m via seeded recurrence."""
    steps = int(math.floor(l - m))
    nu0 = l - steps
    prev = _scaled_seed(nu0 - 1.0, m, x)
    cur = _scaled_seed(nu0, m, x)
    nu = nu0
    for _ in range(steps):
        prev, cur = cur, ((2 * nu + 1) * np.asarray(x) * cur - (nu + m) * prev) / (nu - m + 1)
        nu += 1.0
    return prev, cur


def _double_factorial_f(m: int) -> float:
    """(2m-1)!! as a float."""
    return math.exp(math.lgamma(2 * m + 1) - m * math.log(2.0) - math.lgamma(m + 1))


def legendre_real_degree(l: float, m: int, x):
    """Associated Legendre P_l^m(x) for real degree l >= 0 and integer m >= 0.

    Agrees with assoc_legendre at integer degrees (Condon-Shortley phase
    included).  x must lie in (-1, 1]; the function is singular at -1 for
    non-integer degree.
    """
    if m < 0:
        raise ValueError("order m must be >= 0")
    if l < 0:
        raise ValueError("degree l must be >= 0")
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= -1.0) or np.any(x_arr > 1.0 + 1e-15):
        raise ValueError("argument x must lie in (-1, 1]")
    if l < m:
        # integer-degree convention: vanishes below the order
        if abs(l - round(l)) < 1e-14:
            out = np.zeros_like(x_arr)
            return float(out) if np.ndim(x) == 0 else out
        _, cur = _scaled_seed(l, m, x_arr), _scaled_seed(l, m, x_arr)
        return _finish_legendre(cur, m, x)
    _, cur = _ladder_pair(float(l), m, x_arr)
    return _finish_legendre(cur, m, x)


def _finish_legendre(scaled, m, x):
    out = scaled * ((-1) ** m * _double_factorial_f(m))
    return float(out) if np.ndim(x) == 0 else out


# --- boundary eigen-degrees -------------------------------------------------


def _boundary_functionals(prev, cur, nu, m, x, sin_tc):
    """(value, derivative) boundary functionals on the scaled Legendre.

    value = S_nu^m(x); derivative = dS_nu^m(cos theta)/dtheta at theta_c,
    using (1-x^2) dP/dx = (nu+m) P_{nu-1} - nu x P_nu.
    """
    deriv = -((nu + m) * prev - nu * x * cur) / sin_tc
    return cur, deriv


def _scan_roots(theta_c: float, m: int, n_value: int, n_deriv: int, scan_cap: float):
    """Bracket the first n roots of each boundary family by a fine lane scan."""
    x = math.cos(theta_c)
    sin_tc = math.sin(theta_c)
    n_lanes = int(math.ceil(8.0 * math.pi / theta_c))
    offsets = np.arange(n_lanes) / n_lanes
    nu = m + offsets
    prev = _scaled_seed(nu - 1.0, m, x)
    cur = _scaled_seed(nu, m, x)

    val_brackets, der_brackets = [], []
    last_val = last_der = None
    last_l = None
    j = 0
    while True:
        g_val, g_der = _boundary_functionals(prev, cur, nu, m, x, sin_tc)
        for lane in range(n_lanes):
            l_here = float(nu[lane])
            if last_val is not None:
                if len(val_brackets) < n_value and np.sign(g_val[lane]) * np.sign(last_val) < 0:
                    val_brackets.append((last_l, l_here))
                if len(der_brackets) < n_deriv and np.sign(g_der[lane]) * np.sign(last_der) < 0:
                    der_brackets.append((last_l, l_here))
            last_val, last_der, last_l = float(g_val[lane]), float(g_der[lane]), l_here
        if len(val_brackets) >= n_value and len(der_brackets) >= n_deriv:
            return val_brackets, der_brackets
        if nu[0] >= m + scan_cap:
            raise RootBracketError(
                f"scanned l in [{m}, {m + scan_cap:.1f}] for m={m}, theta_c={theta_c:.4f}: "
                f"found {len(val_brackets)}/{n_value} value roots, "
                f"{len(der_brackets)}/{n_deriv} derivative roots"
            )
        prev, cur = cur, ((2 * nu + 1) * x * cur - (nu + m) * prev) / (nu - m + 1)
        nu = nu + 1.0
        j += 1


def _refine_root(theta_c: float, m: int, family: str, lo: float, hi: float):
    """Bisection on the scaled boundary functional; returns (l, residual)."""
    x = math.cos(theta_c)
    sin_tc = math.sin(theta_c)

    def g(l):
        prev, cur = _ladder_pair(l, m, x)
        val, der = _boundary_functionals(prev, cur, l, m, x, sin_tc)
        return val if family == VALUE else der

    g_lo = g(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo < 1e-13 * max(1.0, mid):
            break
        g_mid = g(mid)
        if g_mid == 0.0:
            lo = hi = mid
            break
        if np.sign(g_mid) == np.sign(g_lo):
            lo, g_lo = mid, g_mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    return root, abs(float(g(root)))


def solve_cap_degrees(theta_c: float, m: int, max_k: int, residual_tol: float = 1e-8):
    """Eigen-degrees l(m)_k for k = m..max_k at cap angle theta_c.

    Returns a list of (k, l, family, residual) with family alternating
    between the derivative condition ((k-m) even) and the value condition
    ((k-m) odd).  The residual is the absolute boundary functional on the
    unit-scaled Legendre function.
    """
    if not 0.0 < theta_c <= math.pi / 2:
        raise ValueError("theta_c must lie in (0, pi/2]")
    if max_k < m:
        raise ValueError("max_k must be >= m")
    # root index of the scan for each k; the constant mode l(0)_0 = 0 is an
    # exact analytic root and never appears as a scan sign change
    needs = []
    for k in range(m, max_k + 1):
        j = k - m
        if m == 0 and k == 0:
            continue
        if j % 2 == 0:
            idx = j // 2 + 1 - (1 if m == 0 else 0)
            needs.append((k, DERIVATIVE, idx))
        else:
            needs.append((k, VALUE, j // 2 + 1))
    n_value = max([idx for _, fam, idx in needs if fam == VALUE], default=0)
    n_deriv = max([idx for _, fam, idx in needs if fam == DERIVATIVE], default=0)
    scan_cap = 4.0 * max(max_k, 1) * math.pi / theta_c
    entries = []
    if m == 0 and max_k >= 0:
        entries.append((0, 0.0, DERIVATIVE, 0.0))
    if needs:
        val_brackets, der_brackets = _scan_roots(theta_c, m, n_value, n_deriv, scan_cap)
        for k, fam, idx in needs:
            lo, hi = (val_brackets if fam == VALUE else der_brackets)[idx - 1]
            root, residual = _refine_root(theta_c, m, fam, lo, hi)
            if residual > residual_tol:
                raise RootBracketError(
                    f"root for (k={k}, m={m}) has boundary residual {residual:.2e} > {residual_tol:.0e}"
                )
            entries.append((k, root, fam, residual))
    entries.sort(key=lambda e: e[0])
    return entries


@dataclass(frozen=True)
class DegreeTable:
    """Solved eigen-degrees for every (k, m), 0 <= k <= K, |m| <= k."""

    theta_c: float
    max_k: int
    degrees: np.ndarray  # (K+1, K+1): degrees[k, m] for m <= k, NaN above
    families: np.ndarray  # (K+1, K+1) of str
    residuals: np.ndarray

    def degree(self, k: int, m: int) -> float:
        return float(self.degrees[k, abs(m)])

    def family(self, k: int, m: int) -> str:
        return str(self.families[k, abs(m)])

    def entry_count(self) -> int:
        return n_coeffs(self.max_k)


def solve_degree_table(theta_c: float, max_k: int, cache_dir=None) -> DegreeTable:
    """Solve (or load from cache) the full degree table for a cap."""
    if cache_dir is not None:
        path = _cache_path(cache_dir, theta_c, max_k)
        if os.path.exists(path):
            return read_degree_table(path)
    kk = max_k + 1
    degrees = np.full((kk, kk), np.nan)
    families = np.full((kk, kk), "", dtype=object)
    residuals = np.full((kk, kk), np.nan)
    for m in range(kk):
        for k, root, fam, res in solve_cap_degrees(theta_c, m, max_k):
            degrees[k, m] = root
            families[k, m] = fam
            residuals[k, m] = res
    table = DegreeTable(theta_c, max_k, degrees, families, residuals)
    _validate_table(table)
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        write_degree_table(_cache_path(cache_dir, theta_c, max_k), table)
    return table


def _validate_table(table: DegreeTable) -> None:
    for m in range(table.max_k + 1):
        col = table.degrees[m:, m]
        if np.any(np.diff(col) <= 0):
            raise RootBracketError(f"degrees for m={m} are not strictly increasing in k")


def _cache_path(cache_dir, theta_c, max_k):
    return os.path.join(cache_dir, f"cap_degrees_{round(theta_c, 12):.12f}_{max_k}.txt")


def write_degree_table(path, table: DegreeTable) -> None:
    """Plain-text table: k m l family residual (one row per (k, m), |m| <= k)."""
    with open(path, "w") as fh:
        fh.write(f"# theta_c {table.theta_c!r} max_k {table.max_k}\n")
        fh.write("# k m l family residual\n")
        for k in range(table.max_k + 1):
            for m in range(-k, k + 1):
                fh.write(
                    f"{k} {m} {table.degrees[k, abs(m)]!r} "
                    f"{table.families[k, abs(m)]} {table.residuals[k, abs(m)]:.3e}\n"
                )


def read_degree_table(path) -> DegreeTable:
    with open(path) as fh:
        header = fh.readline().split()
        theta_c, max_k = float(header[2]), int(header[4])
        fh.readline()
        kk = max_k + 1
        degrees = np.full((kk, kk), np.nan)
        families = np.full((kk, kk), "", dtype=object)
        residuals = np.full((kk, kk), np.nan)
        for line in fh:
            parts = line.split()
            k, m = int(parts[0]), int(parts[1])
            if m < 0:
                continue
            degrees[k, m] = float(parts[2])
            families[k, m] = parts[3]
            residuals[k, m] = float(parts[4])
    return DegreeTable(theta_c, max_k, degrees, families, residuals)


# --- basis, fit, descriptors ------------------------------------------------


@dataclass(frozen=True)
class CapBasisMatrix:
    """Cap basis values over a cap direction set, shape (S, (K+1)^2)."""

    spec: CapSpec
    values: np.ndarray
    direction_set: DirectionSet

    def __post_init__(self):
        if self.values.shape != (len(self.direction_set), n_coeffs(self.spec.max_degree_index)):
            raise ValueError("cap basis shape does not match spec and direction count")
        self.values.setflags(write=False)


@dataclass(frozen=True)
class SchCoefficients:
    """Cap-harmonic coefficient vector in canonical (k, m) order."""

    spec: CapSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (n_coeffs(self.spec.max_degree_index),):
            raise ValueError("coefficient length must be (K+1)^2")
        object.__setattr__(self, "values", v)
        self.values.setflags(write=False)


def cap_basis(spec: CapSpec, dirs: DirectionSet, table: DegreeTable = None,
              cache_dir=None) -> CapBasisMatrix:
    """Evaluate the real cap-harmonic basis on directions inside the cap.

    Columns are normalized to unit l2 norm over the sample set, with the
    constant shared between the (k, m) and (k, -m) pair so degreewise
    amplitudes stay invariant under rotation about the cap axis.
    """
    theta = dirs.polar
    if np.any(theta > spec.half_cone_angle + 1e-12):
        worst = int(np.argmax(theta))
        raise DirectionOutsideCapError(
            f"direction {worst} at polar angle {theta[worst]:.6f} rad lies outside "
            f"the cap of {spec.half_cone_angle:.6f} rad"
        )
    if table is None:
        table = solve_degree_table(spec.half_cone_angle, spec.max_degree_index, cache_dir)
    elif table.max_k < spec.max_degree_index or not math.isclose(
        table.theta_c, spec.half_cone_angle, rel_tol=0, abs_tol=1e-12
    ):
        raise ValueError("degree table does not match the cap spec")
    x = np.cos(theta)
    phi = dirs.azimuth
    k_max = spec.max_degree_index
    values = np.empty((len(dirs), n_coeffs(k_max)))
    for m in range(k_max + 1):
        for k in range(m, k_max + 1):
            _, radial = _ladder_pair(table.degree(k, m), m, x)
            if m == 0:
                col = radial
                norm = np.linalg.norm(col)
                values[:, sh_index(k, 0)] = col / norm
            else:
                col_c = radial * np.cos(m * phi)
                col_s = radial * np.sin(m * phi)
                norm = math.sqrt(0.5 * (col_c @ col_c + col_s @ col_s))
                values[:, sh_index(k, m)] = col_c / norm
                values[:, sh_index(k, -m)] = col_s / norm
    return CapBasisMatrix(spec, values, dirs)


def fit_cap(basis: CapBasisMatrix, samples, **kw) -> SchCoefficients:
    """Least-squares cap-harmonic coefficients of sampled values."""
    return SchCoefficients(basis.spec, least_squares_fit(basis.values, samples, **kw))


def fit_cap_multi(basis: CapBasisMatrix, samples):
    """Fit several sample columns at once; returns an (N, n_rhs) array."""
    return least_squares_fit(basis.values, samples)


def reconstruct_cap(basis: CapBasisMatrix, coeffs: SchCoefficients) -> np.ndarray:
    if coeffs.spec != basis.spec:
        raise ValueError("cap spec mismatch between basis and coefficients")
    return basis.values @ coeffs.values


def shape_descriptors(coeffs: SchCoefficients) -> np.ndarray:
    """Per-degree amplitude sqrt(sum_m q_{k,m}^2); invariant to cap-axis rotation."""
    k_max = coeffs.spec.max_degree_index
    out = np.empty(k_max + 1)
    for k in range(k_max + 1):
        block = coeffs.values[k * k : (k + 1) * (k + 1)]
        out[k] = math.sqrt(float(block @ block))
    return out
