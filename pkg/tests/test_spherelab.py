import math

import numpy as np
import pytest
from scipy import integrate, stats
from sklearn.base import clone

from tubelab.concentration import equator_complement_measure
from tubelab.spherelab import (
    BLOCK_SIZE,
    MAX_SAMPLES,
    EquatorProjector,
    SampleCloud,
    empirical_complement,
    empirical_transport_cost,
    geodesic_distance,
    project_cloud,
    project_to_equator,
    sample_sphere,
)


@pytest.fixture(scope="module")
def cloud50():
    return sample_sphere(50, 100_000, seed=0)


def test_sample_shape_and_norms():
    c = sample_sphere(4, 1000, seed=3)
    assert c.points.shape == (1000, 5)
    assert np.allclose(np.linalg.norm(c.points, axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.allclose(c.colatitudes, np.arcsin(c.points[:, -1]), rtol=0, atol=0)
    assert (c.n, c.N, c.seed) == (4, 1000, 3)


def test_sample_is_deterministic_and_thread_independent():
    N = 3 * BLOCK_SIZE + 17
    a = sample_sphere(6, N, seed=11, n_jobs=1)
    b = sample_sphere(6, N, seed=11, n_jobs=4)
    c = sample_sphere(6, N, seed=11)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.points, c.points)
    assert not np.array_equal(a.points, sample_sphere(6, N, seed=12).points)


def test_sample_prefix_stability():
    # a longer cloud with the same seed extends the shorter one
    short = sample_sphere(3, 100, seed=5)
    long = sample_sphere(3, BLOCK_SIZE + 100, seed=5)
    assert np.array_equal(short.points, long.points[:100])


def test_sample_is_uniform():
    # on S^2 the last coordinate is uniform on [-1, 1] (Archimedes)
    c = sample_sphere(2, 20_000, seed=1)
    assert stats.kstest(c.points[:, -1], "uniform", args=(-1, 2)).pvalue > 1e-3
    # rotation invariance: any coordinate has the same law
    assert stats.ks_2samp(c.points[:, 0], c.points[:, -1]).pvalue > 1e-3


def test_sample_validation():
    with pytest.raises(ValueError):
        sample_sphere(0, 10)
    with pytest.raises(ValueError):
        sample_sphere(2, 10, seed=-1)
    with pytest.raises(MemoryError):
        sample_sphere(2, MAX_SAMPLES + 1)


def test_csv_round_trip():
    c = sample_sphere(3, 257, seed=9)
    text = c.to_csv()
    assert text.splitlines()[0] == "x0,x1,x2,x3,colatitude"
    back = SampleCloud.from_csv(text, seed=9)
    assert np.array_equal(back.points, c.points)
    assert np.array_equal(back.colatitudes, c.colatitudes)
    assert back.to_csv() == text


def test_csv_rejects_bad_input():
    with pytest.raises(ValueError):
        SampleCloud.from_csv("a,b,colatitude\n1,0,0\n")
    with pytest.raises(ValueError):
        SampleCloud.from_csv("x0,x1,colatitude\n0.6,0.8,0.1\n")
    with pytest.raises(ValueError):
        SampleCloud.from_csv("x0,x1,colatitude\n1.0,1.0,0.0\n")


def test_geodesic_distance():
    e0, e1 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    assert geodesic_distance(e0, e1) == pytest.approx(math.pi / 2)
    assert geodesic_distance(e0, -e0) == pytest.approx(math.pi)
    assert geodesic_distance(e0, e0) == 0.0
    with pytest.raises(ValueError):
        geodesic_distance(np.array([1.0, 1.0, 0]), e0)


def test_projection_properties():
    c = sample_sphere(5, 2000, seed=2)
    P, dist, focal = project_cloud(c.points)
    assert not focal.any()
    assert np.allclose(P[:, -1], 0.0)
    assert np.allclose(np.linalg.norm(P, axis=1), 1.0)
    # the projection realizes the distance to the equator
    geo = np.arccos(np.clip(np.sum(P * c.points, axis=1), -1, 1))
    assert np.allclose(geo, dist, atol=1e-7)
    assert np.allclose(dist, c.distances)
    # and no other equator point is closer (checked against random equator points)
    rng = np.random.default_rng(0)
    E = rng.normal(size=(500, 6))
    E[:, -1] = 0
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    others = np.arccos(np.clip(c.points[:50] @ E.T, -1, 1)).min(axis=1)
    assert np.all(others >= dist[:50] - 1e-12)


def test_projection_of_pole_is_flagged():
    p = project_to_equator(np.array([0.0, 0.0, 1.0]))
    assert p.focal
    assert p.dist == pytest.approx(math.pi / 2)
    assert np.array_equal(p.point, np.array([1.0, 0.0, 0.0]))
    q = project_to_equator(np.array([0.6, 0.0, 0.8]))
    assert not q.focal
    assert np.allclose(q.point, [1.0, 0.0, 0.0])
    assert q.dist == pytest.approx(math.asin(0.8))


def test_monte_carlo_complement_matches_analytic(cloud50):
    for eps in (0.05, 0.1, 0.2, 0.3):
        p_hat, se = empirical_complement(cloud50, eps)
        p = equator_complement_measure(50, eps)
        assert abs(p_hat - p) <= 3 * math.sqrt(p * (1 - p) / cloud50.N)
        assert se == pytest.approx(math.sqrt(p_hat * (1 - p_hat) / cloud50.N))


def test_monte_carlo_transport_cost_matches_quadrature(cloud50):
    n = 50
    num, _ = integrate.quad(lambda t: t * math.cos(t) ** (n - 1), 0, math.pi / 2, epsrel=1e-12)
    den, _ = integrate.quad(lambda t: math.cos(t) ** (n - 1), 0, math.pi / 2, epsrel=1e-12)
    mean, se = empirical_transport_cost(cloud50, order=1)
    assert abs(mean - num / den) <= 3 * se


def test_projector_estimator():
    c = sample_sphere(3, 100, seed=4)
    proj = EquatorProjector()
    assert proj.get_params() == {"atol": 1e-9}
    P = clone(proj).fit_transform(c.points)
    assert np.array_equal(P, project_cloud(c.points)[0])
    fitted = proj.fit(c.points)
    _, dist, focal = fitted.project(c.points)
    assert np.array_equal(dist, c.distances) and not focal.any()
    with pytest.raises(ValueError):
        fitted.transform(np.eye(3))
    with pytest.raises(ValueError):
        fitted.transform(2 * c.points)


def test_custom_locus_distance(cloud50):
    # the great sphere {x0 = 0} is the equator after a rotation
    custom = lambda P: np.abs(np.arcsin(np.clip(P[:, 0], -1, 1)))
    p_hat, _ = empirical_complement(cloud50, 0.2, distance_to_locus=custom)
    p = equator_complement_measure(50, 0.2)
    assert abs(p_hat - p) <= 3 * math.sqrt(p * (1 - p) / cloud50.N)
    default = lambda P: np.abs(np.arcsin(np.clip(P[:, -1], -1, 1)))
    assert empirical_complement(cloud50, 0.2, default) == empirical_complement(cloud50, 0.2)
    with pytest.raises(ValueError):
        empirical_complement(cloud50, 0.2, lambda P: -np.ones(len(P)))
    with pytest.raises(ValueError):
        empirical_complement(cloud50, 2.0)
