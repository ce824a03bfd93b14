import itertools
import json
import math
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from tubelab.mmdist import (
    AuditInstance,
    FiniteMMSpace,
    InfeasibleTransportError,
    ResolutionError,
    box_bound_via_tube,
    box_exact,
    constant_family,
    dirac_family,
    equator_latitude_instance,
    implication_audit,
    projection_transport_cost,
    transport_plan,
    tube_matched_instance,
    w1_exact,
)
from tubelab.spherelab import project_cloud, sample_sphere


def euclidean_space(P, w=None):
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    D = np.linalg.norm(P[:, None] - P[None], axis=-1)
    return FiniteMMSpace.uniform(D) if w is None else FiniteMMSpace(D, w)


def lp_w1(D, mu, nu):
    m = len(mu)
    A = np.zeros((2 * m, m * m))
    for i in range(m):
        A[i, i * m:(i + 1) * m] = 1
        A[m + i, i::m] = 1
    return linprog(D.ravel(), A_eq=A, b_eq=np.concatenate([mu, nu]), method="highs").fun


def nx_w1(D, mu_int, nu_int):
    G = nx.DiGraph()
    m = len(mu_int)
    for i in range(m):
        G.add_node(("s", i), demand=-int(mu_int[i]))
        G.add_node(("t", i), demand=int(nu_int[i]))
    for i in range(m):
        for j in range(m):
            # networkx needs integer costs; scale by 10^9
            G.add_edge(("s", i), ("t", j), weight=int(round(D[i, j] * 1e9)))
    return nx.min_cost_flow_cost(G) / 1e9


# ---------------------------------------------------------------- W1


def test_w1_trivial_examples():
    D = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert w1_exact(FiniteMMSpace(D, [1, 0]), [0, 1]).cost == 1.0
    assert w1_exact(FiniteMMSpace(D, [0.5, 0.5]), [1, 0]).cost == 0.5
    same = w1_exact(FiniteMMSpace(D, [0.3, 0.7]), [0.3, 0.7])
    assert same.cost == 0.0
    assert np.allclose(same.pi, np.diag([0.3, 0.7]))


def test_w1_exhaustive_two_point_plans():
    # 2x2 couplings of (a, 1-a) and (b, 1-b) form the segment pi_11 = t; scan it
    d = 1.0
    D = np.array([[0.0, d], [d, 0.0]])
    for a, b in [(0.5, 1.0), (0.25, 0.75), (0.6, 0.1), (0.3, 0.3)]:
        ts = np.linspace(max(0.0, a + b - 1), min(a, b), 1001)
        best = min(d * ((a - t) + (b - t)) for t in ts)
        plan = w1_exact(FiniteMMSpace(D, [a, 1 - a]), [b, 1 - b])
        assert plan.cost == pytest.approx(best, abs=1e-12)
    assert w1_exact(FiniteMMSpace(D, [0.5, 0.5]), [1.0, 0.0]).cost == 0.5


def test_w1_against_networkx_integer_masses():
    rng = np.random.default_rng(0)
    for _ in range(30):
        m = int(rng.integers(2, 9))
        sp = euclidean_space(rng.normal(size=(m, 2)))
        L = 60
        mu_int = rng.multinomial(L, np.ones(m) / m)
        nu_int = rng.multinomial(L, np.ones(m) / m)
        plan = w1_exact(sp.with_weights(mu_int / L), nu_int / L)
        assert plan.cost == pytest.approx(nx_w1(sp.D, mu_int, nu_int) / L, abs=1e-8)


def test_w1_against_linprog_real_weights():
    rng = np.random.default_rng(1)
    for _ in range(40):
        m = int(rng.integers(1, 12))
        sp = euclidean_space(rng.normal(size=(m, 3)))
        mu = rng.random(m)
        mu[rng.random(m) < 0.3] = 0
        mu = mu / mu.sum() if mu.sum() > 0 else np.ones(m) / m
        nu = rng.random(m)
        nu /= nu.sum()
        plan = w1_exact(sp.with_weights(mu), nu)
        assert plan.cost == pytest.approx(lp_w1(sp.D, mu, nu), abs=1e-9)
        assert np.allclose(plan.pi.sum(axis=1), mu, atol=1e-9)
        assert np.allclose(plan.pi.sum(axis=0), nu, atol=1e-9)
        assert np.all(plan.pi >= 0)
        assert plan.cost == pytest.approx(float((plan.pi * sp.D).sum()), abs=1e-9)
        assert abs(plan.gap) <= 1e-7
        assert plan.lipschitz_excess <= 1e-12


def test_w1_dual_certificate_on_rationals():
    sp = euclidean_space(np.arange(5.0))
    plan = w1_exact(sp, [1, 0, 0, 0, 0])
    assert plan.cost == 2.0
    assert abs(plan.gap) <= 1e-12
    f = plan.potential
    assert float(f @ (sp.w - np.array([1, 0, 0, 0, 0]))) == pytest.approx(2.0, abs=1e-12)


def test_w1_tie_breaking_is_reproducible():
    # all plans cost the same on a uniform metric; repeated solves agree exactly
    D = 1.0 - np.eye(4)
    sp = FiniteMMSpace(D, [0.25] * 4)
    nu = [0.4, 0.1, 0.1, 0.4]
    a, b = w1_exact(sp, nu), w1_exact(sp, nu)
    assert np.array_equal(a.pi, b.pi)
    assert a.cost == pytest.approx(0.3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_w1_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 8))
    sp = euclidean_space(rng.normal(size=(m, 2)))
    a, b, c = (rng.dirichlet(np.ones(m)) for _ in range(3))
    ab = w1_exact(sp.with_weights(a), b).cost
    bc = w1_exact(sp.with_weights(b), c).cost
    ac = w1_exact(sp.with_weights(a), c).cost
    assert ac <= ab + bc + 1e-8
    assert w1_exact(sp.with_weights(b), a).cost == pytest.approx(ab, abs=1e-9)


def test_transport_plan_rectangular():
    C = np.array([[1.0, 2.0, 3.0], [4.0, 1.0, 0.5]])
    plan = transport_plan([0.5, 0.5], [0.2, 0.3, 0.5], C)
    assert plan.pi.shape == (2, 3)
    assert np.all(plan.alpha[:, None] + plan.beta[None, :] <= C + 1e-12)
    dual = 0.5 * plan.alpha.sum() + plan.beta @ np.array([0.2, 0.3, 0.5])
    assert dual == pytest.approx(plan.cost, abs=1e-12)


def test_w1_errors():
    D = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        w1_exact(FiniteMMSpace(D, [0.5, 0.5]), [0.5, 0.4])
    with pytest.raises(ValueError):
        w1_exact(FiniteMMSpace(D, [0.5, 0.5]), [1.0])
    with pytest.raises(InfeasibleTransportError):
        transport_plan([0.5, 0.5], [0.7, 0.7], np.ones((2, 2)))


# ---------------------------------------------------------------- mm-space type


def test_mm_space_validation():
    with pytest.raises(ValueError):
        FiniteMMSpace(np.array([[0.0, 1.0], [2.0, 0.0]]), [0.5, 0.5])
    with pytest.raises(ValueError):
        FiniteMMSpace(np.array([[0.0, 1.0, 5.0], [1.0, 0.0, 1.0], [5.0, 1.0, 0.0]]), [1 / 3] * 3)
    with pytest.raises(ValueError):
        FiniteMMSpace(np.zeros((2, 2)), [0.5, 0.6])
    with pytest.raises(ValueError):
        FiniteMMSpace(np.zeros((2, 2)), [0.5, 0.25, 0.25])


def test_mm_space_json_round_trip():
    sp = euclidean_space(np.array([0.0, 1.0, 3.0]), [0.25, 0.25, 0.5])
    doc = json.loads(sp.to_json())
    assert doc["m"] == 3 and len(doc["D"]) == 9
    back = FiniteMMSpace.from_json(sp.to_json())
    assert np.array_equal(back.D, sp.D) and np.array_equal(back.w, sp.w)
    nested = FiniteMMSpace.from_json({"m": 3, "D": sp.D.tolist(), "w": sp.w.tolist()})
    assert np.array_equal(nested.D, sp.D)
    with pytest.raises(ValueError):
        FiniteMMSpace.from_json({"m": 3, "D": sp.D.tolist(), "w": sp.w.tolist(), "extra": 1})
    with pytest.raises(ValueError):
        FiniteMMSpace.from_json({"m": 2, "D": [0.0, 1.0, 1.0], "w": [0.5, 0.5]})


def test_quotient_and_pushforward():
    D = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    sp = FiniteMMSpace(D, [0.2, 0.3, 0.5])
    q = sp.quotient()
    assert q.m == 2 and np.allclose(q.w, [0.5, 0.5])
    assert np.allclose(sp.pushforward([2, 2, 2]), [0, 0, 1])
    assert np.allclose(sp.pushforward([0, -1, 0]), [1, 0, 0])


# ---------------------------------------------------------------- projection cost


def test_projection_cost_zero_on_locus():
    sp = euclidean_space(np.arange(4.0))
    assert projection_transport_cost(sp, [0, 1, 2, 3]) == 0.0


def test_projection_cost_bounds_w1():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = int(rng.integers(2, 10))
        sp = euclidean_space(rng.normal(size=(m, 2)), rng.dirichlet(np.ones(m)))
        proj = rng.integers(0, m, size=m)
        cost = projection_transport_cost(sp, proj, order=1)
        assert w1_exact(sp, sp.pushforward(proj)).cost <= cost + 1e-9


def test_projection_cost_excludes_flagged():
    sp = euclidean_space(np.arange(3.0), [0.5, 0.25, 0.25])
    cost, excluded = projection_transport_cost(sp, [0, -1, 0], order=2, return_excluded=True)
    assert excluded == 0.25
    assert cost == pytest.approx(0.25 * 4)
    with pytest.raises(ValueError):
        projection_transport_cost(sp, [0, 0, 0], order=3)
    with pytest.raises(ValueError):
        projection_transport_cost(sp)


def test_cloud_projection_cost_inequalities():
    cloud = sample_sphere(20, 20_000, seed=1)
    c1 = projection_transport_cost(cloud, order=1)
    c2 = projection_transport_cost(cloud, order=2)
    dist = cloud.distances
    for eps in np.linspace(0.01, 1.0, 20):
        m = float(np.mean(dist > eps))
        assert c2 >= eps ** 2 * m
        # split bound: points beyond eps travel at most pi/2, the rest at most eps
        assert c1 <= math.pi / 2 * m + eps
    cost, excluded = projection_transport_cost(cloud, order=1, return_excluded=True)
    assert excluded == 0.0 and cost == c1


def test_cloud_projection_cost_vanishes_with_concentration():
    costs = [projection_transport_cost(sample_sphere(n, 5000, seed=2), order=1) for n in (10, 100, 1000)]
    assert costs[0] > costs[1] > costs[2]
    assert costs[2] < 0.05


# ---------------------------------------------------------------- box distance


def _brute_box(X, Y, k):
    """Every (phi, psi) pair of step maps with the right margins, every interval subset."""
    cx = [int(Fraction(w).limit_denominator(k) * k) for w in X.w]
    cy = [int(Fraction(w).limit_denominator(k) * k) for w in Y.w]
    phis = set(itertools.permutations(np.repeat(np.arange(X.m), cx)))
    psis = set(itertools.permutations(np.repeat(np.arange(Y.m), cy)))
    best = 1.0
    for phi in phis:
        for psi in psis:
            delta = np.abs(X.D[np.ix_(phi, phi)] - Y.D[np.ix_(psi, psi)])
            for size in range(1, k + 1):
                for S in itertools.combinations(range(k), size):
                    best = min(best, max(delta[np.ix_(S, S)].max(), 1 - size / k))
    return best


@pytest.mark.parametrize("d", [0.1, 0.4, 0.9])
def test_box_point_vs_two_points(d):
    X = FiniteMMSpace(np.zeros((1, 1)), [1.0])
    Y = FiniteMMSpace(np.array([[0.0, d], [d, 0.0]]), [0.5, 0.5])
    assert box_exact(X, Y) == pytest.approx(min(d, 0.5), abs=1e-15)
    assert _brute_box(X, Y, 2) == pytest.approx(min(d, 0.5), abs=1e-15)


def test_box_matches_unreduced_brute_force():
    rng = np.random.default_rng(8)
    for _ in range(12):
        k = 4
        mx, my = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        wx = rng.multinomial(k - mx, np.ones(mx) / mx) + 1
        wy = rng.multinomial(k - my, np.ones(my) / my) + 1
        X = euclidean_space(rng.uniform(0, 1, size=(mx, 2)), wx / k)
        Y = euclidean_space(rng.uniform(0, 1, size=(my, 2)), wy / k)
        assert box_exact(X, Y) == pytest.approx(_brute_box(X, Y, k), abs=1e-14)


def test_box_identity_symmetry_isomorphism():
    rng = np.random.default_rng(9)
    for _ in range(10):
        m = int(rng.integers(1, 6))
        counts = rng.multinomial(8 - m, np.ones(m) / m) + 1
        X = euclidean_space(rng.normal(size=(m, 2)), counts / 8)
        perm = rng.permutation(m)
        Xp = FiniteMMSpace(X.D[np.ix_(perm, perm)], X.w[perm])
        assert box_exact(X, X) == 0.0
        assert box_exact(X, Xp) == 0.0
        Y = euclidean_space(rng.normal(size=(2, 2)), [0.5, 0.5])
        assert box_exact(X, Y) == box_exact(Y, X)
        assert 0.0 <= box_exact(X, Y) <= 1.0


def test_box_ignores_zero_weight_points_and_duplicates():
    X = euclidean_space(np.array([0.0, 1.0, 5.0]), [0.5, 0.5, 0.0])
    Y = euclidean_space(np.array([0.0, 0.0, 1.0]), [0.25, 0.25, 0.5])
    assert box_exact(X, Y) == 0.0


def test_box_resolution_error():
    X = FiniteMMSpace(np.zeros((1, 1)), [1.0])
    Y = euclidean_space(np.arange(3.0), [1 / 3, 1 / 3, 1 / 3])
    Z = euclidean_space(np.arange(2.0), [0.5, 0.5])
    # thirds against halves needs k = 6, within the cap
    assert box_exact(Y, Z) == pytest.approx(1 / 3)
    with pytest.raises(ResolutionError):
        # thirds against fifths needs k = 15
        box_exact(Y, euclidean_space(np.arange(2.0), [0.2, 0.8]))
    with pytest.raises(ResolutionError):
        box_exact(X, euclidean_space(np.arange(2.0), [0.1, 0.9]))


def test_box_bound_via_tube():
    assert box_bound_via_tube(0.0, 0.0) == 0.0
    assert box_bound_via_tube(0.01, 0.1) == 0.2
    assert box_bound_via_tube(0.7, 0.1) == 0.7
    with pytest.raises(ValueError):
        box_bound_via_tube(1.5, 0.1)
    with pytest.raises(ValueError):
        box_bound_via_tube(0.5, -0.1)


def test_box_below_tube_bound_on_matched_instances():
    for seed in range(4):
        X, Y, c = tube_matched_instance(5, 0.3, seed=seed)
        assert box_exact(X, Y) <= box_bound_via_tube(c, 0.3) + 1e-12


def test_matched_instance_distances_are_projection_distances():
    X, Y, c = tube_matched_instance(5, 0.3, m=6, seed=1)
    cloud = sample_sphere(5, 6, seed=1)
    _, dist, _ = project_cloud(cloud.points)
    assert c == float(np.mean(dist > 0.3))
    # distances move by at most the two travel distances, hence by 2 eps inside the tube
    assert np.all(np.abs(Y.D - X.D) <= dist[:, None] + dist[None, :] + 1e-12)


# ---------------------------------------------------------------- audit


def test_equator_instance():
    inst = equator_latitude_instance(1000, 0.1)
    assert inst.space.m == 7
    t = inst.space.D[3]
    assert np.allclose(t[::-1], t)  # symmetric quantiles
    assert inst.target[3] == 1.0
    with pytest.raises(ValueError):
        equator_latitude_instance(100, 0.1, m=6)


def test_audit_equator_family_vanishes():
    ns = [10, 100, 10 ** 3, 10 ** 4, 10 ** 5, 10 ** 6, 10 ** 7]
    rep = implication_audit([equator_latitude_instance(n, n ** -0.25) for n in ns])
    assert rep.pattern == "both_vanish" and rep.implication_holds
    assert rep.rows[-1].w1 < 0.05 and rep.rows[-1].box_bound < 0.05
    for r in rep.rows:
        assert r.box_exact <= r.box_bound + 1e-12
        assert abs(r.certificate_gap) <= 1e-7


def test_audit_dirac_counterexample():
    rep = implication_audit(dirac_family(6))
    assert [r.box_exact for r in rep.rows] == [0.0] * 6
    assert [r.w1 for r in rep.rows] == [1.0, 0.0, 1.0, 0.0, 1.0, 0.0]
    assert rep.pattern == "box_only" and rep.implication_holds


def test_audit_constant_family():
    rep = implication_audit(constant_family())
    assert all(r.w1 == 0.0 and r.box_bound == 0.0 and r.box_exact == 0.0 for r in rep.rows)
    assert rep.pattern == "both_vanish"


def test_audit_csv_and_threads():
    fam = [equator_latitude_instance(n, n ** -0.25) for n in (10, 100, 1000)]
    a = implication_audit(fam, n_jobs=1)
    b = implication_audit(fam, n_jobs=3)
    assert a.to_csv() == b.to_csv()
    lines = a.to_csv().splitlines()
    assert lines[0] == "instance,w1,box_bound,box_exact,complement,eps"
    assert lines[1].startswith("equator_n10,")
    with pytest.raises(ValueError):
        implication_audit([])


def test_audit_reports_missing_box_when_unresolvable():
    sp = euclidean_space(np.arange(3.0), [0.1, 0.2, 0.7])
    rep = implication_audit([AuditInstance("x", sp, np.array([0.7, 0.2, 0.1]))])
    assert rep.rows[0].box_exact is None
    assert not rep.box_vanishing
    assert ",," in rep.to_csv().splitlines()[1]
