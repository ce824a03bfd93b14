"""Tube volumes around submanifolds of flat, spherical and symmetric ambients.

The flat and spherical volumes follow Weyl's expansion in mean
Lipschitz-Killing curvatures ``kappa_{2j}`` (integrated curvature divided by
the volume of the submanifold). The symmetric-space routines work with the
volume-element density along a normal geodesic, written in terms of the
eigenvalues ``d_a**2`` of the normal curvature matrix ``A``.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import integrate

from . import specfun
from ._validation import check_positive_int, check_real, check_symmetric

__all__ = [
    "Flat",
    "Sphere",
    "SymmetricCodim1",
    "SpectralData",
    "TubeSpec",
    "CurvatureTensor",
    "SecondFundamentalForm",
    "JacobiSeriesState",
    "weyl_flat_volume",
    "weyl_sphere_volume",
    "symmetric_codim1_volume",
    "tube_volume",
    "flat_vs_sphere_relative_error",
    "constant_curvature_kappa",
    "stirling_kappa_estimate",
    "lk_density",
    "symmetric_tube_density",
    "totally_geodesic_density",
    "gaussian_bound",
    "jacobi_series_eval",
    "jacobi_closed_form",
]

# 2F1 power series is only used up to this argument; beyond it the sphere
# integral is evaluated through the regularized incomplete beta function.
_MAX_2F1_ARG = 0.99


@dataclass(frozen=True)
class SpectralData:
    """Square roots ``d_a >= 0`` of the eigenvalues of the normal curvature matrix."""

    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float).ravel()
        if d.size == 0:
            raise ValueError("spectrum must be nonempty")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("spectrum entries must be finite and nonnegative")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    def __len__(self):
        return self.d.size

    @classmethod
    def isotropic(cls, dim, ricci):
        """Equal entries with ``sum(d**2) == ricci``."""
        dim = check_positive_int(dim, "dim")
        ricci = check_real(ricci, "ricci", low=0.0)
        return cls(np.full(dim, math.sqrt(ricci / dim)))

    @property
    def max(self):
        return float(self.d.max())

    @property
    def ricci(self):
        """``sum(d_a**2)``, the Ricci curvature along the normal direction."""
        return float(np.sum(self.d ** 2))


@dataclass(frozen=True)
class Flat:
    pass


@dataclass(frozen=True)
class Sphere:
    R: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "R", check_real(self.R, "R", low=0.0, low_open=True))


@dataclass(frozen=True)
class SymmetricCodim1:
    """Codimension-1 totally geodesic locus in a compact symmetric space."""

    spectrum: SpectralData
    t_max: float

    def __post_init__(self):
        if not isinstance(self.spectrum, SpectralData):
            object.__setattr__(self, "spectrum", SpectralData(self.spectrum))
        t_max = check_real(self.t_max, "t_max", low=0.0, low_open=True)
        if self.spectrum.max * t_max > math.pi / 2 + 1e-12:
            raise ValueError("t_max must satisfy max(d) * t_max <= pi/2")
        object.__setattr__(self, "t_max", t_max)


Ambient = Union[Flat, Sphere, SymmetricCodim1]


@dataclass(frozen=True)
class TubeSpec:
    """A single tube-volume query.

    ``kappas[j-1]`` is the mean curvature ``kappa_{2j}`` for
    ``j = 1 .. n // 2``; omitted values default to zero (totally geodesic or
    flat submanifold).
    """

    ambient: Ambient
    n: int
    q: int
    eps: float
    vol_M: float
    kappas: Sequence[float] = field(default=None)

    def __post_init__(self):
        n = check_positive_int(self.n, "n")
        q = check_positive_int(self.q, "q")
        eps = check_real(self.eps, "eps", low=0.0, low_open=True)
        vol_M = check_real(self.vol_M, "vol_M", low=0.0, low_open=True)
        kappas = self.kappas
        if kappas is None:
            kappas = (0.0,) * (n // 2)
        kappas = tuple(float(k) for k in kappas)
        if len(kappas) != n // 2:
            raise ValueError(f"kappas must have n // 2 = {n // 2} entries, got {len(kappas)}")
        if isinstance(self.ambient, Sphere) and not eps < math.pi / 2 * self.ambient.R:
            raise ValueError("sphere ambient requires eps < (pi/2) * R")
        if isinstance(self.ambient, SymmetricCodim1):
            if q != 1:
                raise ValueError("SymmetricCodim1 ambient requires q == 1")
            if len(self.ambient.spectrum) != n:
                raise ValueError("spectrum length must equal the submanifold dimension n")
            if eps > self.ambient.t_max:
                raise ValueError("eps must not exceed t_max")
        elif not isinstance(self.ambient, (Flat, Sphere)):
            raise TypeError(f"unknown ambient {self.ambient!r}")
        for name, value in (("n", n), ("q", q), ("eps", eps), ("vol_M", vol_M), ("kappas", kappas)):
            object.__setattr__(self, name, value)

    def with_ambient(self, ambient):
        return TubeSpec(ambient, self.n, self.q, self.eps, self.vol_M, self.kappas)


def _rising_even(q, j):
    # (q + 2)(q + 4) ... (q + 2j)
    out = 1.0
    for i in range(1, j + 1):
        out *= q + 2 * i
    return out


def weyl_flat_volume(spec: TubeSpec) -> float:
    """Weyl's tube volume in Euclidean ``R^{n+q}``.

    ``vol_M * disc_volume(q, eps) * (1 + sum_j kappa_{2j} eps^{2j} / ((q+2)...(q+2j)))``
    """
    correction = 0.0
    for j, kappa in enumerate(spec.kappas, start=1):
        correction += kappa * spec.eps ** (2 * j) / _rising_even(spec.q, j)
    return spec.vol_M * specfun.disc_volume(spec.q, spec.eps) * (1.0 + correction)


def _sphere_radial_integral(q, n, j, theta):
    """``int_0^theta sin^{q+2j-1} cos^{n-2j}`` times ``(q + 2j)``."""
    s2 = math.sin(theta) ** 2
    a = j + 0.5 * q
    if s2 <= _MAX_2F1_ARG:
        hyp = specfun.gauss_2f1(a, j - 0.5 * (n - 1), a + 1.0, s2)
        return math.sin(theta) ** (q + 2 * j) * hyp.value
    # same integral written as an incomplete beta function
    p, m = a, 0.5 * (n - 2 * j + 1)
    log_b = math.lgamma(p) + math.lgamma(m) - math.lgamma(p + m)
    return (q + 2 * j) * 0.5 * math.exp(log_b) * specfun.reg_inc_beta(p, m, s2)


def weyl_sphere_volume(spec: TubeSpec) -> float:
    """Tube volume around ``M^n`` in the round sphere ``S_R^{n+q}``.

    Sums over ``j = 0 .. n // 2`` with ``K_0 = vol_M`` and
    ``K_{2j} = kappa_{2j} * vol_M``; the radial integral is reduced to a
    Gauss hypergeometric function of ``sin^2(eps / R)``.
    """
    if not isinstance(spec.ambient, Sphere):
        raise TypeError("weyl_sphere_volume needs a Sphere ambient")
    R = spec.ambient.R
    q, n = spec.q, spec.n
    theta = spec.eps / R
    prefactor = 2.0 * math.pi ** (0.5 * q) / math.gamma(0.5 * q)
    total = 0.0
    K = (1.0,) + spec.kappas
    for j, kappa in enumerate(K):
        if kappa == 0.0:
            continue
        denom = q * _rising_even(q, j)
        total += kappa * R ** (2 * j + q) / denom * _sphere_radial_integral(q, n, j, theta)
    return prefactor * spec.vol_M * total


def symmetric_codim1_volume(spec: TubeSpec) -> float:
    """Volume of the two-sided tube ``2 vol_M int_0^eps prod cos(d_a t) dt``."""
    if not isinstance(spec.ambient, SymmetricCodim1):
        raise TypeError("symmetric_codim1_volume needs a SymmetricCodim1 ambient")
    d = spec.ambient.spectrum.d
    value, _ = integrate.quad(
        lambda t: float(np.prod(np.cos(d * t))), 0.0, spec.eps, epsabs=1e-13, epsrel=1e-12, limit=200
    )
    return 2.0 * spec.vol_M * value


def tube_volume(spec: TubeSpec) -> float:
    if isinstance(spec.ambient, Flat):
        return weyl_flat_volume(spec)
    if isinstance(spec.ambient, Sphere):
        return weyl_sphere_volume(spec)
    return symmetric_codim1_volume(spec)


def flat_vs_sphere_relative_error(spec: TubeSpec) -> float:
    """``|Vol_sphere / Vol_flat - 1|`` for the same submanifold data."""
    sphere = weyl_sphere_volume(spec)
    flat = weyl_flat_volume(spec.with_ambient(Flat()))
    return abs(sphere / flat - 1.0)


def constant_curvature_kappa(n: int, j: int, r: float) -> float:
    """``kappa_{2j}`` of an ``n``-manifold of constant sectional curvature ``1/r^2``."""
    n = check_positive_int(n, "n")
    j = check_positive_int(j, "j", minimum=0)
    r = check_real(r, "r", low=0.0, low_open=True)
    if 2 * j > n:
        raise ValueError(f"need 2j <= n, got j={j}, n={n}")
    # n! / (2^j j! (n-2j)!) counts ways to pick j disjoint pairs, so it is an integer
    count = math.factorial(n) // (2 ** j * math.factorial(j) * math.factorial(n - 2 * j))
    return float(count) * r ** (-2 * j)


def stirling_kappa_estimate(n: int, j: int, eps_over_r: float) -> float:
    """Large-``n`` estimate of ``eps^{2j} kappa_{2j}``: ``(n x)^{2j} / (2^j j!)``."""
    n = check_positive_int(n, "n")
    j = check_positive_int(j, "j")
    if n < 2 * j:
        raise ValueError("need n >= 2j")
    return (n * float(eps_over_r)) ** (2 * j) / (2.0 ** j * math.factorial(j))


@dataclass(frozen=True)
class CurvatureTensor:
    """Riemann tensor ``R_{abcd}`` in an orthonormal frame.

    Sign convention: ``R_{abab}`` is the sectional curvature of the plane
    ``(e_a, e_b)``.
    """

    components: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.components, dtype=float)
        if R.ndim != 4 or len(set(R.shape)) != 1 or R.shape[0] < 1:
            raise ValueError("components must have shape (n, n, n, n)")
        tol = 1e-12 * max(1.0, float(np.abs(R).max(initial=0.0)))
        checks = {
            "antisymmetry in (a, b)": R + R.transpose(1, 0, 2, 3),
            "antisymmetry in (c, d)": R + R.transpose(0, 1, 3, 2),
            "pair symmetry": R - R.transpose(2, 3, 0, 1),
            "first Bianchi identity": R + R.transpose(0, 2, 3, 1) + R.transpose(0, 3, 1, 2),
        }
        for label, residual in checks.items():
            if np.abs(residual).max() > tol:
                raise ValueError(f"curvature tensor violates {label}")
        R.setflags(write=False)
        object.__setattr__(self, "components", R)

    @property
    def dim(self):
        return self.components.shape[0]

    @classmethod
    def constant(cls, n, r=1.0):
        """Space form of sectional curvature ``1/r^2``."""
        eye = np.eye(n)
        R = (np.einsum("ac,bd->abcd", eye, eye) - np.einsum("ad,bc->abcd", eye, eye)) / r ** 2
        return cls(R)

    @classmethod
    def from_shape_operators(cls, K):
        """Gauss-equation tensor ``sum_s K_ac K_bd - K_ad K_bc`` of a flat-ambient embedding."""
        K = np.asarray(K, dtype=float)
        if K.ndim == 2:
            K = K[None]
        R = np.einsum("sac,sbd->abcd", K, K) - np.einsum("sad,sbc->abcd", K, K)
        return cls(R)

    def scalar_curvature(self):
        return float(np.einsum("abab->", self.components))


def _perfect_matchings(items):
    """Yield ``(sign, pairs)`` for every perfect matching of a sorted tuple.

    ``sign`` is the sign of the permutation listing the pairs in order.
    """
    if not items:
        yield 1, ()
        return
    first, rest = items[0], items[1:]
    for k, partner in enumerate(rest):
        remaining = rest[:k] + rest[k + 1:]
        # moving ``partner`` next to ``first`` costs k transpositions
        for sign, pairs in _perfect_matchings(remaining):
            yield (-1) ** k * sign, ((first, partner),) + pairs


def _permanent(W):
    j = W.shape[0]
    if j == 0:
        return 1.0
    rows = range(j)
    return sum(math.prod(W[i, p[i]] for i in rows) for p in itertools.permutations(range(j)))


def lk_density(Omega: CurvatureTensor, j: int) -> float:
    """Coefficient of the volume form in the Lipschitz-Killing density ``k_{2j}``.

    ``k_0 = 1``, ``k_2 = scalar / 2`` and ``k_n`` is the Pfaffian. The
    antisymmetrized permutation sum is reduced to a sum over ``2j``-subsets of
    frame indices and pairs of perfect matchings of each subset; it is exact
    but exponential, hence the ``n <= 8`` cap.
    """
    n = Omega.dim
    j = check_positive_int(j, "j", minimum=0)
    if 2 * j > n:
        raise ValueError(f"need 2j <= n, got j={j}, n={n}")
    if n > 8:
        raise ValueError("lk_density is limited to n <= 8")
    if j == 0:
        return 1.0
    R = Omega.components
    total = 0.0
    for subset in itertools.combinations(range(n), 2 * j):
        matchings = list(_perfect_matchings(subset))
        for sign_m, m in matchings:
            for sign_n, nn in matchings:
                W = np.array([[R[a, b, c, d] for (c, d) in nn] for (a, b) in m])
                total += sign_m * sign_n * _permanent(W)
    return float(total)


@dataclass(frozen=True)
class SecondFundamentalForm:
    """Shape operators ``K^s`` (one symmetric matrix per normal) and director cosines."""

    K: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        if K.ndim == 2:
            K = K[None]
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        if K.ndim != 3 or K.shape[1] != K.shape[2]:
            raise ValueError("K must be a stack of square matrices")
        if omega.shape != (K.shape[0],):
            raise ValueError("omega must have one entry per shape operator")
        for s in range(K.shape[0]):
            check_symmetric(K[s], f"K[{s}]")
        if abs(float(omega @ omega) - 1.0) > 1e-12:
            raise ValueError("director cosines must have unit norm")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "omega", omega)

    @classmethod
    def zero(cls, n, q=1):
        omega = np.zeros(q)
        omega[0] = 1.0
        return cls(np.zeros((q, n, n)), omega)

    @property
    def weighted(self):
        """``sum_s omega^s K^s``."""
        return np.einsum("s,sab->ab", self.omega, self.K)


def _sin_over_d(d, t):
    # sin(d t) / d with the d -> 0 limit t
    d = np.asarray(d, dtype=float)
    out = np.full(d.shape, float(t))
    nz = d != 0
    out[nz] = np.sin(d[nz] * t) / d[nz]
    return out


def symmetric_tube_density(spectrum: SpectralData, sff: SecondFundamentalForm, t: float) -> float:
    """``det(cos(sqrt(A) t) + sin(sqrt(A) t) / sqrt(A) . sum_s omega^s K^s)``.

    ``A`` is diagonal with entries ``d_a**2``; the shape operators must be
    expressed in the same eigenbasis.
    """
    d = spectrum.d
    Kw = sff.weighted
    if Kw.shape != (d.size, d.size):
        raise ValueError(
            f"shape operators are {Kw.shape[0]}x{Kw.shape[1]} but the spectrum has {d.size} entries"
        )
    if not np.any(Kw):
        return totally_geodesic_density(spectrum, t)
    M = np.diag(np.cos(d * t)) + _sin_over_d(d, t)[:, None] * Kw
    return float(np.linalg.det(M))


def totally_geodesic_density(spectrum: SpectralData, t: float) -> float:
    """``prod_a cos(d_a t)``."""
    x = spectrum.d * check_real(t, "t")
    # d_a t that should equal pi/2 can round a few ulps past it, where cos < 0
    x = np.where((x > math.pi / 2) & (x <= math.pi / 2 * (1 + 1e-15)), math.pi / 2, x)
    return float(np.prod(np.cos(x)))


def gaussian_bound(spectrum: SpectralData, t: float) -> float:
    """``exp(-t^2 sum d_a^2 / 2)``, an upper bound for the totally geodesic density."""
    t = check_real(t, "t")
    if t < 0 or spectrum.max * t > math.pi / 2 * (1 + 1e-15):
        raise ValueError("gaussian_bound requires 0 <= d_a t <= pi/2 for every a")
    # sum of (d_a t)^2 stays bounded where t^2 * sum d_a^2 could overflow
    return math.exp(-0.5 * float(np.sum((spectrum.d * t) ** 2)))


@dataclass(frozen=True)
class JacobiSeriesState:
    """Taylor coefficients of the Fermi-frame Jacobian for a parallel curvature.

    With ``J0 = I`` the Jacobian is
    ``I + sum_{j=1}^{order} (A_j + B_j K) t^j / j!``, where ``A_1 = 0``,
    ``B_1 = I``, ``A_{j+1} = -B_j A`` and ``B_{j+1} = A_j``.
    """

    A: np.ndarray
    order: int
    A_coeffs: tuple
    B_coeffs: tuple

    @classmethod
    def build(cls, A, order=12):
        A = check_symmetric(A, "A")
        order = check_positive_int(order, "order")
        n = A.shape[0]
        Aj, Bj = np.zeros((n, n)), np.eye(n)
        A_coeffs, B_coeffs = [Aj], [Bj]
        for _ in range(order - 1):
            Aj, Bj = -Bj @ A, Aj
            A_coeffs.append(Aj)
            B_coeffs.append(Bj)
        return cls(A, order, tuple(A_coeffs), tuple(B_coeffs))


def jacobi_series_eval(state: JacobiSeriesState, K_weighted, t: float) -> np.ndarray:
    """Truncated Jacobi series with ``J0 = I`` and ``dJ0/dt = K_weighted``."""
    K = check_symmetric(K_weighted, "K_weighted", atol=1e-10)
    n = state.A.shape[0]
    if K.shape != (n, n):
        raise ValueError("K_weighted must match the dimension of A")
    J = np.eye(n)
    scale = 1.0
    for j, (Aj, Bj) in enumerate(zip(state.A_coeffs, state.B_coeffs), start=1):
        scale *= t / j
        J = J + (Aj + Bj @ K) * scale
    return J


def jacobi_closed_form(A, K_weighted, t: float) -> np.ndarray:
    """``cos(sqrt(A) t) + sin(sqrt(A) t) / sqrt(A) . K`` via an eigendecomposition of ``A``."""
    A = check_symmetric(A, "A", atol=1e-10)
    w, V = np.linalg.eigh(A)
    d = np.sqrt(np.clip(w, 0.0, None))
    cos_part = (V * np.cos(d * t)) @ V.T
    sin_part = (V * _sin_over_d(d, t)) @ V.T
    return cos_part + sin_part @ np.asarray(K_weighted, dtype=float)
