"""Distances between finite metric-measure spaces.

* :func:`w1_exact` solves the Wasserstein-1 transport problem exactly by
  successive shortest augmenting paths and returns a 1-Lipschitz potential
  that certifies optimality.
* :func:`box_exact` computes the box distance restricted to step
  parametrizations of ``[0, 1)`` by exhaustive search. It is exact within
  that class and an upper bound on the box distance over all
  parametrizations.
* :func:`implication_audit` tabulates Wasserstein and box distances along a
  family of finite instances.
"""

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from ._validation import check_distance_matrix, check_probability_vector, check_real
from .concentration import default_n_jobs, equator_complement_measure

__all__ = [
    "FiniteMMSpace",
    "TransportPlan",
    "ResolutionError",
    "InfeasibleTransportError",
    "w1_exact",
    "transport_plan",
    "projection_transport_cost",
    "box_exact",
    "box_bound_via_tube",
    "AuditInstance",
    "AuditRow",
    "AuditReport",
    "implication_audit",
    "equator_latitude_instance",
    "tube_matched_instance",
    "dirac_family",
    "constant_family",
    "MASS_DENOMINATOR",
    "BOX_MAX_DENOMINATOR",
    "MASS_SCALE",
]

#: Largest denominator tried when reading weights as exact rationals.
MASS_DENOMINATOR = 10 ** 6
#: Integer scale for weights that are not such rationals.
MASS_SCALE = 2 ** 40
#: Largest interval count searched by :func:`box_exact`.
BOX_MAX_DENOMINATOR = 8


class ResolutionError(ValueError):
    """Weights are not rationals with a small enough common denominator."""


class InfeasibleTransportError(ValueError):
    """Source and target masses differ."""


@dataclass(frozen=True)
class FiniteMMSpace:
    """Finite (pseudo-)metric space ``D`` with probability weights ``w``."""

    D: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        D = check_distance_matrix(self.D)
        w = check_probability_vector(self.w)
        if w.size != D.shape[0]:
            raise ValueError("w must have one entry per point of D")
        D.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "w", w)

    @property
    def m(self):
        return self.w.size

    @classmethod
    def uniform(cls, D):
        D = np.asarray(D, dtype=float)
        return cls(D, np.full(D.shape[0], 1.0 / D.shape[0]))

    def with_weights(self, w):
        return FiniteMMSpace(self.D, w)

    def pushforward(self, proj):
        """Weights of the image measure under the index map ``proj`` (``-1`` drops a point)."""
        proj = np.asarray(proj, dtype=int)
        if proj.shape != (self.m,):
            raise ValueError("proj must map every point")
        nu = np.zeros(self.m)
        keep = proj >= 0
        np.add.at(nu, proj[keep], self.w[keep])
        total = nu.sum()
        return nu / total

    def support(self):
        """The mm-space restricted to the points of positive weight."""
        keep = self.w > 0
        return FiniteMMSpace(self.D[np.ix_(keep, keep)], self.w[keep] / self.w[keep].sum())

    def quotient(self, atol=0.0):
        """Merge points at distance ``<= atol`` (the metric quotient of a pseudo-metric)."""
        labels = -np.ones(self.m, dtype=int)
        reps = []
        for i in range(self.m):
            if labels[i] >= 0:
                continue
            close = (self.D[i] <= atol) & (labels < 0)
            labels[close] = len(reps)
            reps.append(i)
        w = np.zeros(len(reps))
        np.add.at(w, labels, self.w)
        return FiniteMMSpace(self.D[np.ix_(reps, reps)], w)

    def to_json(self):
        return json.dumps({"m": self.m, "D": self.D.ravel().tolist(), "w": self.w.tolist()})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text) if isinstance(text, str) else text
        unknown = set(data) - {"m", "D", "w"}
        if unknown:
            raise ValueError(f"unknown keys in mm-space document: {sorted(unknown)}")
        m = int(data["m"])
        D = np.asarray(data["D"], dtype=float)
        if D.ndim == 1:
            if D.size != m * m:
                raise ValueError("flat D must have m*m entries")
            D = D.reshape(m, m)
        if D.shape != (m, m):
            raise ValueError("D must be m x m")
        return cls(D, np.asarray(data["w"], dtype=float))


@dataclass(frozen=True)
class TransportPlan:
    """Optimal coupling with its dual certificate.

    ``alpha`` and ``beta`` are dual variables with
    ``alpha_i + beta_j <= C_ij``. For transport on a common ground set,
    ``potential`` is the 1-Lipschitz function ``f(x) = min_j (D_xj - beta_j)``
    and ``gap = cost - sum_x f(x) (mu_x - nu_x)``.
    """

    pi: np.ndarray
    cost: float
    alpha: np.ndarray
    beta: np.ndarray
    potential: Optional[np.ndarray] = None
    gap: Optional[float] = None
    lipschitz_excess: Optional[float] = None


def _integer_masses(a, b, denominator=MASS_DENOMINATOR):
    """Scale two probability vectors to integer masses with equal totals.

    Exact when every weight is a rational with denominator at most
    ``denominator`` and the common denominator stays below it; otherwise the
    weights are rounded to multiples of ``1 / MASS_SCALE`` by largest
    remainders.
    """
    fracs = [Fraction(float(x)).limit_denominator(denominator) for x in np.concatenate([a, b])]
    if all(abs(float(f) - float(x)) <= 1e-12 for f, x in zip(fracs, np.concatenate([a, b]))):
        L = 1
        for f in fracs:
            L = L * f.denominator // math.gcd(L, f.denominator)
            if L > denominator:
                break
        else:
            ints = [int(f * L) for f in fracs]
            ia, ib = ints[: len(a)], ints[len(a):]
            if sum(ia) == sum(ib):
                return np.array(ia, dtype=np.int64), np.array(ib, dtype=np.int64), L

    def largest_remainder(p):
        raw = np.asarray(p, dtype=float) * MASS_SCALE
        base = np.floor(raw).astype(np.int64)
        short = MASS_SCALE - int(base.sum())
        order = np.lexsort((np.arange(raw.size), -(raw - base)))
        base[order[:short]] += 1
        return base

    return largest_remainder(a), largest_remainder(b), MASS_SCALE


def _ssp(C, supply, demand):
    """Min-cost transportation by successive shortest paths with potentials.

    Dense Dijkstra over sources and sinks; ties go to the lowest index,
    sources before sinks.
    """
    m, k = C.shape
    flow = np.zeros((m, k), dtype=np.int64)
    sup = supply.copy()
    dem = demand.copy()
    pu = np.zeros(m)
    pv = np.zeros(k)
    # make initial reduced costs nonnegative
    pv[:] = C.min(axis=0)
    inf = math.inf
    while sup.sum() > 0:
        du = np.where(sup > 0, 0.0, inf)
        dv = np.full(k, inf)
        par_v = np.full(k, -1)
        par_u = np.full(m, -1)
        done_u = np.zeros(m, dtype=bool)
        done_v = np.zeros(k, dtype=bool)
        while True:
            cu = np.where(done_u, inf, du)
            cv = np.where(done_v, inf, dv)
            iu, iv = int(np.argmin(cu)), int(np.argmin(cv))
            if cu[iu] == inf and cv[iv] == inf:
                break
            if cu[iu] <= cv[iv]:
                i = iu
                done_u[i] = True
                rc = np.maximum(C[i] + pu[i] - pv, 0.0)
                cand = du[i] + rc
                better = (cand < dv) & ~done_v
                dv[better] = cand[better]
                par_v[better] = i
            else:
                j = iv
                done_v[j] = True
                back = flow[:, j] > 0
                rc = np.maximum(-C[:, j] + pv[j] - pu, 0.0)
                cand = dv[j] + rc
                better = back & (cand < du) & ~done_u
                du[better] = cand[better]
                par_u[better] = j
        open_sinks = np.where(dem > 0, dv, inf)
        target = int(np.argmin(open_sinks))
        dist = open_sinks[target]
        if dist == inf:
            raise InfeasibleTransportError("no augmenting path; masses are inconsistent")
        pu += np.minimum(du, dist)
        pv += np.minimum(dv, dist)

        # walk back to the source that starts the path
        path = []
        j = target
        while True:
            i = par_v[j]
            path.append((i, j))
            if par_u[i] < 0:
                break
            j = par_u[i]
        root = path[-1][0]
        delta = min(sup[root], dem[target])
        # backward arcs on the path are (i, par_u[i]) for every non-root source
        for i, _ in path[:-1]:
            delta = min(delta, flow[i, par_u[i]])
        for idx, (i, j) in enumerate(path):
            flow[i, j] += delta
            if idx < len(path) - 1:
                flow[i, par_u[i]] -= delta
        sup[root] -= delta
        dem[target] -= delta
    return flow, -pu, pv


def transport_plan(a, b, C, denominator=MASS_DENOMINATOR) -> TransportPlan:
    """Exact optimal transport between weights ``a`` and ``b`` for the cost matrix ``C``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    if C.shape != (a.size, b.size):
        raise ValueError("C must have shape (len(a), len(b))")
    if abs(a.sum() - b.sum()) > 1e-9:
        raise InfeasibleTransportError(f"total masses differ: {a.sum()} vs {b.sum()}")
    a = check_probability_vector(a / a.sum(), "a", atol=1e-9)
    b = check_probability_vector(b / b.sum(), "b", atol=1e-9)
    ia, ib, L = _integer_masses(a, b, denominator)
    flow, alpha, beta = _ssp(C, ia, ib)
    pi = flow / L
    cost = float(np.sum(flow * C) / L)
    return TransportPlan(pi, cost, alpha, beta)


def w1_exact(mu: FiniteMMSpace, nu, denominator=MASS_DENOMINATOR) -> TransportPlan:
    """Wasserstein-1 distance between ``mu.w`` and ``nu`` on the ground metric ``mu.D``.

    The returned plan carries a 1-Lipschitz potential ``f`` with
    ``sum f (mu - nu)`` equal to the cost up to ``gap``.
    """
    nu = check_probability_vector(np.asarray(nu, dtype=float), "nu", atol=1e-9)
    if nu.size != mu.m:
        raise ValueError("nu must live on the ground set of mu")
    plan = transport_plan(mu.w, nu, mu.D, denominator)
    f = np.min(mu.D - plan.beta[None, :], axis=1)
    dual = float(f @ (mu.w - nu))
    lip = float(np.max(f[:, None] - f[None, :] - mu.D))
    return TransportPlan(
        plan.pi, plan.cost, plan.alpha, plan.beta, potential=f, gap=plan.cost - dual, lipschitz_excess=lip
    )


def projection_transport_cost(source, projection=None, order=1, return_excluded=False):
    """Cost of moving every point to its projection, ``E[d(x, proj x)^order]``.

    ``source`` is either a :class:`~tubelab.spherelab.SampleCloud` (projection
    onto the equator; ``projection`` is ignored) or a :class:`FiniteMMSpace`
    with ``projection`` an index array, ``-1`` marking points where the
    projection is undefined. Excluded points contribute nothing; their mass is
    returned with ``return_excluded=True``.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if isinstance(source, FiniteMMSpace):
        if projection is None:
            raise ValueError("a finite space needs an explicit projection index map")
        proj = np.asarray(projection, dtype=int)
        if proj.shape != (source.m,):
            raise ValueError("projection must map every point")
        keep = proj >= 0
        d = np.zeros(source.m)
        d[keep] = source.D[np.flatnonzero(keep), proj[keep]]
        cost = float(np.sum(source.w[keep] * d[keep] ** order))
        excluded = float(source.w[~keep].sum())
    else:
        from .spherelab import project_cloud

        _, dist, focal = project_cloud(source.points)
        cost = float(np.sum(dist[~focal] ** order) / source.N)
        excluded = float(focal.sum() / source.N)
    return (cost, excluded) if return_excluded else cost


def _step_counts(weights_list, cap):
    """Common interval count ``k`` and per-point interval counts."""
    fracs = []
    for w in weights_list:
        row = []
        for x in w:
            f = Fraction(float(x)).limit_denominator(cap)
            if abs(float(f) - float(x)) > 1e-9:
                raise ResolutionError(f"weight {x!r} is not a rational with denominator <= {cap}")
            row.append(f)
        fracs.append(row)
    k = 1
    for row in fracs:
        for f in row:
            k = k * f.denominator // math.gcd(k, f.denominator)
    if k > cap:
        raise ResolutionError(f"common denominator {k} exceeds the cap {cap}")
    return k, [[int(f * k) for f in row] for row in fracs]


def _psi_assignments(phi, labels):
    """Distinct interval assignments of the multiset ``labels`` up to reordering inside ``phi`` blocks.

    Inside a block where ``phi`` is constant the intervals are
    interchangeable, so only assignments nondecreasing there are kept.
    Rows come out in lexicographic order.
    """
    perms = np.unique(np.array(list(itertools.permutations(labels)), dtype=np.int64), axis=0)
    same = phi[1:] == phi[:-1]
    ok = np.all((perms[:, 1:] >= perms[:, :-1]) | ~same, axis=1)
    return perms[ok]


def _min_box_objective(delta, k):
    """``min_S max(max_{s,t in S} delta[s, t], 1 - |S|/k)`` per table; ``delta`` is ``(k, k, T)``."""
    T = delta.shape[2]
    n_sets = 1 << k
    disc = np.zeros((n_sets, T))
    for top in range(k):
        base = 1 << top
        # R[r] = max of delta[top, i] over i in {top} and the bits of r
        R = np.empty((base, T))
        R[0] = delta[top, top]
        for r in range(1, base):
            low = (r & -r).bit_length() - 1
            np.maximum(R[r & (r - 1)], delta[top, low], out=R[r])
        np.maximum(disc[:base], R, out=disc[base:2 * base])
    sizes = np.array([bin(S).count("1") for S in range(n_sets)])
    return np.maximum(disc, (1.0 - sizes / k)[:, None]).min(axis=0)


def box_exact(X: FiniteMMSpace, Y: FiniteMMSpace, max_denominator=BOX_MAX_DENOMINATOR) -> float:
    """Box distance between ``X`` and ``Y`` over step parametrizations.

    All weights must be rationals with a common denominator
    ``k <= max_denominator``. Both spaces are parametrized by assigning the
    ``k`` intervals ``[i/k, (i+1)/k)`` to points in proportion to their
    weights. The result is the minimum, over such assignment pairs and over
    unions ``I0`` of intervals, of
    ``max(max_{s,t in I0} |rho_X(s,t) - rho_Y(s,t)|, 1 - |I0|)``.
    Zero-distance points are merged first.
    """
    X = X.support().quotient()
    Y = Y.support().quotient()
    k, (cx, cy) = _step_counts([X.w, Y.w], max_denominator)
    # relabeling intervals is a symmetry, so phi can be fixed
    phi = np.repeat(np.arange(X.m), cx)
    rho_x = X.D[np.ix_(phi, phi)]
    psi = _psi_assignments(phi, np.repeat(np.arange(Y.m), cy))
    best = 1.0
    for start in range(0, psi.shape[0], 2048):
        chunk = psi[start:start + 2048]
        rho_y = Y.D[chunk[:, :, None], chunk[:, None, :]]
        delta = np.ascontiguousarray(np.abs(rho_x[None] - rho_y).transpose(1, 2, 0))
        best = min(best, float(_min_box_objective(delta, k).min()))
    return best


def box_bound_via_tube(complement_mass: float, eps: float) -> float:
    """Upper bound ``max(complement_mass, 2 eps)`` on the box distance to the projected space.

    Valid when the locus is totally geodesic with the ambient distance:
    distances between tube points move by at most ``2 eps`` under the
    projection, and the discarded parameter set has measure
    ``complement_mass``.
    """
    c = check_real(complement_mass, "complement_mass", low=0.0, high=1.0)
    eps = check_real(eps, "eps", low=0.0)
    return max(c, 2.0 * eps)


@dataclass(frozen=True)
class AuditInstance:
    """One member of an audited family: ``(X, mu)`` and a target measure ``nu`` on ``X``."""

    name: str
    space: FiniteMMSpace
    target: np.ndarray
    eps: Optional[float] = None
    complement: Optional[float] = None


class AuditRow(NamedTuple):
    instance: str
    w1: float
    box_bound: Optional[float]
    box_exact: Optional[float]
    complement: Optional[float]
    eps: Optional[float]
    certificate_gap: float


@dataclass(frozen=True)
class AuditReport:
    """Per-instance distances and the family-level implication check.

    ``pattern`` is one of ``both_vanish``, ``box_only`` (box distance
    vanishes while W1 does not, as for moving Dirac masses), ``w1_only``
    (would contradict W1 convergence implying box convergence) or
    ``neither``. The observable distance is not computed; it is bounded above
    by the box column.
    """

    rows: List[AuditRow]
    threshold: float
    w1_vanishing: bool
    box_vanishing: bool
    implication_holds: bool
    pattern: str

    def to_csv(self):
        def fmt(v):
            return "" if v is None else repr(float(v))

        lines = ["instance,w1,box_bound,box_exact,complement,eps"]
        for r in self.rows:
            lines.append(
                ",".join([r.instance, fmt(r.w1), fmt(r.box_bound), fmt(r.box_exact), fmt(r.complement), fmt(r.eps)])
            )
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {
            "rows": [r._asdict() for r in self.rows],
            "threshold": self.threshold,
            "w1_vanishing": self.w1_vanishing,
            "box_vanishing": self.box_vanishing,
            "implication_holds": self.implication_holds,
            "pattern": self.pattern,
        }


def _vanishing(values, threshold):
    vals = np.asarray(values, dtype=float)
    tail = vals[len(vals) // 2:]
    return bool(tail[-1] <= threshold and np.all(np.diff(tail) <= 1e-12))


def _audit_row(inst: AuditInstance) -> AuditRow:
    plan = w1_exact(inst.space, inst.target)
    bound = None
    if inst.eps is not None and inst.complement is not None:
        bound = box_bound_via_tube(inst.complement, inst.eps)
    try:
        bx = box_exact(inst.space, inst.space.with_weights(inst.target))
    except ResolutionError:
        bx = None
    return AuditRow(inst.name, plan.cost, bound, bx, inst.complement, inst.eps, float(plan.gap))


def implication_audit(instances: Sequence[AuditInstance], threshold=0.05, n_jobs=None) -> AuditReport:
    """Tabulate W1 and box distances along a family and check ``W1 -> 0 => box -> 0``.

    The box column is the tube bound when the instance carries ``eps`` and
    ``complement``, otherwise the exact step-parametrization value. A column
    counts as vanishing when its last value is at most ``threshold`` and it
    is nonincreasing over the last half of the family.
    """
    instances = list(instances)
    if not instances:
        raise ValueError("need at least one instance")
    n_jobs = default_n_jobs() if n_jobs is None else int(n_jobs)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(_audit_row, instances))
    else:
        rows = [_audit_row(inst) for inst in instances]

    box_col = [r.box_bound if r.box_bound is not None else r.box_exact for r in rows]
    w1_v = _vanishing([r.w1 for r in rows], threshold)
    box_v = None not in box_col and _vanishing(box_col, threshold)
    if w1_v and box_v:
        pattern = "both_vanish"
    elif box_v:
        pattern = "box_only"
    elif w1_v:
        pattern = "w1_only"
    else:
        pattern = "neither"
    return AuditReport(rows, threshold, w1_v, box_v, (not w1_v) or box_v, pattern)


def _latitude_quantile(n, p):
    # signed latitude t on S^n with P(T <= t) = p
    if p == 0.5:
        return 0.0
    tail = 2.0 * (1.0 - p) if p > 0.5 else 2.0 * p
    t = brentq(lambda s: equator_complement_measure(n, s) - tail, 0.0, math.pi / 2, xtol=1e-15, rtol=1e-14)
    return t if p > 0.5 else -t


def equator_latitude_instance(n: int, eps: float, m: int = 7) -> AuditInstance:
    """Latitude quotient of ``S^n`` discretized at ``m`` equal-mass quantiles.

    Points sit at the quantiles ``(i + 1/2) / m`` of the signed distance to
    the equator, with distances ``|t_i - t_j|`` along a meridian and weight
    ``1/m`` each. ``m`` is odd so the middle point lies on the equator; the
    target measure puts all mass there. The complement is the discretized
    mass farther than ``eps``.
    """
    if m % 2 == 0:
        raise ValueError("m must be odd")
    t = np.array([_latitude_quantile(n, (i + 0.5) / m) for i in range(m)])
    D = np.abs(t[:, None] - t[None, :])
    space = FiniteMMSpace.uniform(D)
    target = np.zeros(m)
    target[m // 2] = 1.0
    complement = float(np.mean(np.abs(t) > eps))
    return AuditInstance(f"equator_n{n}", space, target, eps=float(eps), complement=complement)


def tube_matched_instance(n: int, eps: float, m: int = 8, seed: int = 0):
    """Random ``m``-point sample of ``S^n`` and its projection to the equator.

    Returns ``(X, Y, complement)`` where ``X`` carries geodesic distances
    between the sample points, ``Y`` between their projections (the
    equator is totally geodesic, so these are also its intrinsic distances),
    both with uniform weights, and ``complement`` is the sample fraction
    farther than ``eps``.
    """
    from .spherelab import project_cloud, sample_sphere

    cloud = sample_sphere(n, m, seed)
    P, dist, _ = project_cloud(cloud.points)

    def geo(Z):
        return np.arccos(np.clip(Z @ Z.T, -1.0, 1.0)) * (1 - np.eye(len(Z)))

    X = FiniteMMSpace.uniform(geo(np.asarray(cloud.points)))
    Y = FiniteMMSpace.uniform(geo(P))
    return X, Y, float(np.mean(dist > eps))


def dirac_family(length: int = 6, spacing: float = 1.0) -> List[AuditInstance]:
    """Dirac masses alternating between two points versus a fixed Dirac mass.

    All members are mm-isomorphic to the one-point space, so the box
    distance is zero, but the measures do not converge weakly.
    """
    D = np.array([[0.0, spacing], [spacing, 0.0]])
    target = np.array([1.0, 0.0])
    out = []
    for i in range(length):
        w = np.zeros(2)
        w[(i + 1) % 2] = 1.0
        out.append(AuditInstance(f"dirac_{i}", FiniteMMSpace(D, w), target))
    return out


def constant_family(length: int = 4, m: int = 4) -> List[AuditInstance]:
    """The same uniform space compared with itself."""
    pos = np.arange(m, dtype=float)
    space = FiniteMMSpace.uniform(np.abs(pos[:, None] - pos[None, :]))
    return [
        AuditInstance(f"constant_{i}", space, space.w.copy(), eps=0.0, complement=0.0)
        for i in range(length)
    ]
