"""Concentration-locus scans for codimension-1 totally geodesic loci.

A family of closed subsets ``S_n`` is a concentration locus when the mass
outside the ``eps_n``-tube around ``S_n`` tends to zero for some radii
``eps_n -> 0``. The scan below checks one supplied schedule ``eps_n`` on a
finite range of ``n``; a ``not_locus`` verdict is relative to that schedule.
"""

import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from sklearn.base import BaseEstimator

from . import specfun
from ._validation import check_positive_int, check_real
from .tube import SpectralData

__all__ = [
    "ConcentrationFamily",
    "EpsSchedule",
    "ScanRow",
    "RateEstimate",
    "ScanResult",
    "ConcentrationScanner",
    "equator_complement_measure",
    "symmetric_complement_measure",
    "complement_upper_bound",
    "equator_family",
    "scan_concentration",
    "fit_rate",
    "default_n_jobs",
]

LOCUS = "locus"
NOT_LOCUS = "not_locus"
INCONCLUSIVE = "inconclusive"


def default_n_jobs():
    """Thread cap from ``TUBELAB_THREADS`` (default 1)."""
    raw = os.environ.get("TUBELAB_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def equator_complement_measure(n: int, eps: float) -> float:
    """Normalized mass of ``S^n`` farther than ``eps`` from the equator ``S^{n-1}``.

    Equals ``int_eps^{pi/2} cos^{n-1} / int_0^{pi/2} cos^{n-1}``, which is the
    regularized incomplete beta function ``I_{cos^2 eps}(n/2, 1/2)``.
    """
    n = check_positive_int(n, "n", minimum=2)
    eps = check_real(eps, "eps", low=0.0, high=math.pi / 2)
    if eps == 0.0:
        return 1.0
    if eps == math.pi / 2:
        return 0.0
    return specfun.reg_inc_beta(0.5 * n, 0.5, math.cos(eps) ** 2)


def _density(d):
    def f(t):
        return float(np.prod(np.cos(d * t)))
    return f


def _quad(f, lo, hi, width):
    if hi <= lo:
        return 0.0
    # breakpoints on the decay scale keep the adaptive rule from missing the peak
    points = [lo + k * width for k in (0.5, 1, 2, 4, 8) if lo + k * width < hi]
    value, _ = integrate.quad(f, lo, hi, points=points or None, epsabs=1e-14, epsrel=1e-11, limit=500)
    return value


def symmetric_complement_measure(spectrum: SpectralData, eps: float, t_max: float) -> float:
    """Normalized mass with ``t > eps`` under the density ``prod cos(d_a t)`` on ``[0, t_max]``."""
    t_max = check_real(t_max, "t_max", low=0.0, low_open=True)
    eps = check_real(eps, "eps", low=0.0, high=t_max)
    if spectrum.max * t_max > math.pi / 2 * (1 + 1e-15):
        raise ValueError("t_max must satisfy max(d) * t_max <= pi/2")
    f = _density(spectrum.d)
    width = 1.0 / math.sqrt(spectrum.ricci) if spectrum.ricci > 0 else t_max
    total = _quad(f, 0.0, t_max, width)
    if eps == 0.0:
        return 1.0
    outside = _quad(f, eps, t_max, width)
    return min(1.0, max(0.0, outside / total))


def complement_upper_bound(
    n: int,
    eps: float,
    ricci_model: Tuple[float, float],
    *,
    dim: Optional[int] = None,
    spectrum: Optional[SpectralData] = None,
    t_max: Optional[float] = None,
) -> float:
    """Gaussian upper bound on the complement mass at radius ``eps``.

    Along a normal geodesic the density satisfies
    ``prod cos(d_a t) <= exp(-t^2 (a n + b) / 2)`` whenever
    ``sum d_a^2 = a n + b``. Integrating over ``[eps, t_max]`` and dividing
    by the normalizer ``int_0^t_max prod cos(d_a t) dt`` gives
    ``(t_max - eps) exp(-eps^2 (a n + b) / 2) / normalizer``, clipped to 1.

    The normalizer is taken from ``spectrum`` when given, otherwise from the
    isotropic spectrum of length ``dim`` (default ``n``) with the same Ricci
    curvature.
    """
    a, b = (float(v) for v in ricci_model)
    ricci = a * n + b
    if not ricci > 0:
        raise ValueError(f"ricci model gives a*n + b = {ricci} <= 0")
    eps = check_real(eps, "eps", low=0.0)
    if spectrum is None:
        spectrum = SpectralData.isotropic(dim or n, ricci)
    quarter = math.pi / (2.0 * spectrum.max)
    t_max = quarter if t_max is None else min(float(t_max), quarter)
    if eps == 0.0:
        return 1.0
    if eps >= t_max:
        return 0.0
    if np.allclose(spectrum.d, spectrum.d[0]) and t_max == quarter:
        # int_0^{pi/2d} cos^m(d t) dt = B(1/2, (m+1)/2) / (2 d)
        m, d = len(spectrum), spectrum.d[0]
        normalizer = 0.5 * math.exp(
            math.lgamma(0.5) + math.lgamma(0.5 * (m + 1)) - math.lgamma(0.5 * m + 1)
        ) / d
    else:
        normalizer = _quad(_density(spectrum.d), 0.0, t_max, 1.0 / math.sqrt(spectrum.ricci))
    return min(1.0, (t_max - eps) * math.exp(-0.5 * eps * eps * ricci) / normalizer)


@dataclass(frozen=True)
class ConcentrationFamily:
    """A family ``n -> (X_n, S_n)`` described by its complement-of-tube mass.

    ``ricci_model = (a, b)`` gives the normal Ricci curvature ``a n + b`` at
    index ``n``; ``locus_dim(n)`` is the dimension of ``S_n`` (the number of
    curvature directions entering the density). ``diameter`` bounds the
    distance from any point to the locus.
    """

    label: str
    complement_measure: Callable[[int, float], float]
    ricci_model: Tuple[float, float]
    diameter: float
    locus_dim: Callable[[int], int] = field(default=lambda n: n)

    def complement(self, n, eps):
        return self.complement_measure(n, min(float(eps), self.diameter))

    def bound(self, n, eps):
        return complement_upper_bound(n, eps, self.ricci_model, dim=self.locus_dim(n))

    def rescaled(self, factor):
        """Same family with every distance multiplied by ``factor``."""
        factor = check_real(factor, "factor", low=0.0, low_open=True)
        base = self.complement_measure
        a, b = self.ricci_model
        return ConcentrationFamily(
            label=self.label,
            complement_measure=lambda n, eps: base(n, eps / factor),
            ricci_model=(a / factor ** 2, b / factor ** 2),
            diameter=self.diameter * factor,
            locus_dim=self.locus_dim,
        )


def equator_family(radius: float = 1.0) -> ConcentrationFamily:
    """Equators ``S^{n-1}`` inside round spheres ``S^n`` of fixed radius."""
    fam = ConcentrationFamily(
        label="equator",
        complement_measure=lambda n, eps: equator_complement_measure(n, min(eps, math.pi / 2)),
        ricci_model=(1.0, -1.0),
        diameter=math.pi / 2,
        locus_dim=lambda n: n - 1,
    )
    return fam if radius == 1.0 else fam.rescaled(radius)


_POWER_RE = re.compile(
    r"^\s*(?:(?P<c>[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*\*\s*)?n\s*\^\s*(?P<k>[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*$"
)
_CONST_RE = re.compile(r"^\s*const\s*:\s*(?P<e>[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*$")


@dataclass(frozen=True)
class EpsSchedule:
    """Tube radii ``n -> eps_n`` with an optional claimed decay rate."""

    values: Callable[[int], float]
    claimed_rate: Optional[float] = None
    text: str = ""

    def __call__(self, n):
        return float(self.values(n))

    @classmethod
    def power(cls, c, k):
        """``eps_n = c * n**(-k)``."""
        c, k = float(c), float(k)
        return cls(lambda n: c * float(n) ** (-k), claimed_rate=k, text=f"{c!r}*n^-{k!r}")

    @classmethod
    def constant(cls, eps0):
        eps0 = float(eps0)
        return cls(lambda n: eps0, claimed_rate=0.0, text=f"const:{eps0!r}")

    @classmethod
    def parse(cls, text):
        """Parse ``"c*n^-k"``, ``"n^-k"`` or ``"const:eps0"``."""
        m = _CONST_RE.match(text)
        if m:
            eps0 = float(m.group("e"))
            if not eps0 > 0:
                raise ValueError("constant schedule needs eps0 > 0")
            return cls.constant(eps0)
        m = _POWER_RE.match(text)
        if not m:
            raise ValueError(f"cannot parse schedule {text!r}; use 'c*n^-k' or 'const:eps0'")
        c = float(m.group("c")) if m.group("c") else 1.0
        exponent = float(m.group("k"))
        if not c > 0:
            raise ValueError("schedule coefficient must be positive")
        return cls.power(c, -exponent)

    def scaled(self, factor):
        base = self.values
        return EpsSchedule(lambda n: factor * base(n), self.claimed_rate, self.text)


class ScanRow(NamedTuple):
    n: int
    eps: float
    complement: float
    bound: float


class RateEstimate(NamedTuple):
    k: float
    c: float
    r2: float


@dataclass(frozen=True)
class ScanResult:
    label: str
    rows: Tuple[ScanRow, ...]
    verdict: str
    rate_estimate: Optional[RateEstimate]

    def to_dict(self):
        rate = self.rate_estimate
        return {
            "label": self.label,
            "rows": [
                {"n": r.n, "eps": r.eps, "complement": r.complement, "bound": r.bound}
                for r in self.rows
            ],
            "verdict": self.verdict,
            "rate": None if rate is None else {"k": rate.k, "c": rate.c, "r2": rate.r2},
        }

    def to_csv(self):
        lines = ["n,eps,complement,bound"]
        lines += [f"{r.n},{r.eps!r},{r.complement!r},{r.bound!r}" for r in self.rows]
        return "\n".join(lines) + "\n"


def fit_rate(ns, eps) -> RateEstimate:
    """Least-squares fit of ``log eps_n = -k log n + log c``."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(eps, dtype=float))
    if x.size < 2 or np.ptp(x) == 0:
        raise ValueError("need at least two distinct n to fit a rate")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateEstimate(float(-slope), float(math.exp(intercept)), r2)


def _verdict(ns, eps, masses, ricci_model, tol):
    half = max(2, len(ns) // 2)
    tail_n = np.asarray(ns[-half:], dtype=float)
    tail_eps = np.asarray(eps[-half:], dtype=float)
    tail = np.asarray(masses[-half:], dtype=float)
    if tail.size < 2:
        return INCONCLUSIVE

    nonincreasing = bool(np.all(np.diff(tail) <= 1e-15))
    if nonincreasing and tail[-1] < tol:
        # exponential envelope in the variable (a n + b) eps_n^2
        a, b = ricci_model
        x = (a * tail_n + b) * tail_eps ** 2
        positive = tail > 0
        if positive.sum() < 2:
            return LOCUS
        xp, yp = x[positive], np.log(tail[positive])
        if np.ptp(xp) > 0 and np.polyfit(xp, yp, 1)[0] < 0:
            return LOCUS

    if np.all(tail > tol):
        # extrapolate m_n ~ L + c / n to n -> infinity
        limit = np.polyfit(1.0 / tail_n, tail, 1)[1] if np.ptp(tail_n) > 0 else tail[-1]
        if limit > tol:
            return NOT_LOCUS
    return INCONCLUSIVE


def scan_concentration(
    family: ConcentrationFamily,
    schedule: EpsSchedule,
    n_range: Sequence[int],
    tol: float = 1e-2,
    n_jobs: Optional[int] = None,
) -> ScanResult:
    """Evaluate the complement mass along ``n_range`` and classify the family.

    Verdicts:

    * ``locus``: over the last half of the scan the masses are nonincreasing,
      the last one is below ``tol``, and ``log`` mass decreases linearly or
      faster in ``(a n + b) eps_n^2``.
    * ``not_locus``: every tail mass exceeds ``tol`` and the extrapolated
      limit (fit in ``1/n``) also exceeds ``tol``.
    * ``inconclusive`` otherwise.

    Rows are computed independently (threaded when ``n_jobs > 1``) and are
    always returned in the order of ``n_range``.
    """
    ns = [check_positive_int(n, "n") for n in n_range]
    if not ns:
        raise ValueError("n_range must be nonempty")
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("n_range must be strictly increasing")
    tol = check_real(tol, "tol", low=0.0, low_open=True)
    n_jobs = default_n_jobs() if n_jobs is None else check_positive_int(n_jobs, "n_jobs")

    def row(n):
        e = schedule(n)
        if not e > 0:
            raise ValueError(f"schedule gave eps_{n} = {e} <= 0")
        return ScanRow(n, e, float(family.complement(n, e)), float(family.bound(n, e)))

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            rows = tuple(pool.map(row, ns))
    else:
        rows = tuple(row(n) for n in ns)

    eps = [r.eps for r in rows]
    masses = [r.complement for r in rows]
    verdict = _verdict(ns, eps, masses, family.ricci_model, tol)
    rate = fit_rate(ns, eps) if len(set(ns)) >= 2 else None
    return ScanResult(family.label, rows, verdict, rate)


_FAMILIES = {"equator": equator_family}


class ConcentrationScanner(BaseEstimator):
    """Estimator wrapper around :func:`scan_concentration`.

    Parameters
    ----------
    family : str or ConcentrationFamily, default="equator"
        Family to scan; strings name a built-in family.
    schedule : str or EpsSchedule, default="n^-0.25"
        Tube radii, parsed with :meth:`EpsSchedule.parse` when a string.
    tol : float, default=1e-2
        Tail threshold for the ``locus`` verdict.
    n_jobs : int, optional
        Worker threads for row evaluation; defaults to ``TUBELAB_THREADS``.

    Attributes
    ----------
    result_ : ScanResult
    verdict_ : str
    rate_ : RateEstimate or None
    """

    def __init__(self, family="equator", schedule="n^-0.25", tol=1e-2, n_jobs=None):
        self.family = family
        self.schedule = schedule
        self.tol = tol
        self.n_jobs = n_jobs

    def _resolve(self):
        family = self.family
        if isinstance(family, str):
            if family not in _FAMILIES:
                raise ValueError(f"unknown family {family!r}; choose from {sorted(_FAMILIES)}")
            family = _FAMILIES[family]()
        schedule = self.schedule
        if isinstance(schedule, str):
            schedule = EpsSchedule.parse(schedule)
        return family, schedule

    def fit(self, X, y=None):
        """Scan the family over the dimensions listed in ``X``."""
        ns = np.asarray(X).ravel()
        family, schedule = self._resolve()
        self.result_ = scan_concentration(family, schedule, ns.tolist(), self.tol, self.n_jobs)
        self.verdict_ = self.result_.verdict
        self.rate_ = self.result_.rate_estimate
        return self

    def transform(self, X):
        """Complement masses at the fitted schedule for the dimensions in ``X``."""
        if not hasattr(self, "result_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("ConcentrationScanner is not fitted yet")
        family, schedule = self._resolve()
        ns = np.asarray(X).ravel()
        return np.array([family.complement(int(n), schedule(int(n))) for n in ns])
