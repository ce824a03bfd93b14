"""Monte Carlo on the unit sphere ``S^n`` with the equator as target locus.

Points are drawn in fixed-size blocks; block ``b`` uses its own Philox
stream keyed by ``(seed, b)``, so a cloud is bit-identical however many
threads generate it.
"""

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_int, check_real, check_unit_vectors
from .concentration import default_n_jobs

__all__ = [
    "SampleCloud",
    "Projection",
    "EquatorProjector",
    "sample_sphere",
    "geodesic_distance",
    "project_to_equator",
    "project_cloud",
    "empirical_complement",
    "empirical_transport_cost",
    "MAX_SAMPLES",
    "BLOCK_SIZE",
]

#: Largest cloud :func:`sample_sphere` will allocate.
MAX_SAMPLES = 20_000_000
#: Points per RNG stream.
BLOCK_SIZE = 4096


@dataclass(frozen=True)
class SampleCloud:
    n: int
    N: int
    seed: int
    points: np.ndarray
    colatitudes: np.ndarray

    @property
    def distances(self):
        """Geodesic distance of each point to the equator."""
        return np.abs(self.colatitudes)

    def to_csv(self):
        header = ",".join([f"x{i}" for i in range(self.n + 1)] + ["colatitude"])
        buf = io.StringIO()
        buf.write(header + "\n")
        table = np.column_stack([self.points, self.colatitudes])
        np.savetxt(buf, table, delimiter=",", fmt="%.17g")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, seed=-1):
        """Rebuild a cloud from :meth:`to_csv` output (``seed`` is not stored in the file)."""
        lines = text.splitlines()
        header = lines[0].split(",")
        if header[-1] != "colatitude" or header[:-1] != [f"x{i}" for i in range(len(header) - 1)]:
            raise ValueError("cloud CSV header must be 'x0,...,xn,colatitude'")
        table = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",", ndmin=2)
        points = check_unit_vectors(table[:, :-1], "points", atol=1e-12)
        colat = table[:, -1]
        if not np.allclose(colat, np.arcsin(np.clip(points[:, -1], -1, 1)), rtol=0, atol=1e-12):
            raise ValueError("colatitude column does not match the last coordinate")
        return cls(points.shape[1] - 1, points.shape[0], seed, points, colat)


def sample_sphere(n: int, N: int, seed: int = 0, n_jobs: Optional[int] = None) -> SampleCloud:
    """Draw ``N`` i.i.d. uniform points on ``S^n`` (normalized isotropic Gaussians)."""
    n = check_positive_int(n, "n")
    N = check_positive_int(N, "N")
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    if N > MAX_SAMPLES:
        raise MemoryError(f"N={N} exceeds MAX_SAMPLES={MAX_SAMPLES}")
    n_jobs = default_n_jobs() if n_jobs is None else check_positive_int(n_jobs, "n_jobs")
    sizes = [min(BLOCK_SIZE, N - start) for start in range(0, N, BLOCK_SIZE)]

    def make(index):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
        rng = np.random.Generator(np.random.Philox(ss))
        return rng.standard_normal((sizes[index], n + 1))

    if n_jobs > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            blocks = list(pool.map(make, range(len(sizes))))
    else:
        blocks = [make(i) for i in range(len(sizes))]
    g = np.concatenate(blocks)
    points = g / np.linalg.norm(g, axis=1, keepdims=True)
    colat = np.arcsin(np.clip(points[:, -1], -1.0, 1.0))
    points.setflags(write=False)
    colat.setflags(write=False)
    return SampleCloud(n, N, seed, points, colat)


def geodesic_distance(x, y) -> float:
    """Great-circle distance between two unit vectors."""
    x = check_unit_vectors(x, "x")
    y = check_unit_vectors(y, "y")
    if x.shape != y.shape:
        raise ValueError("x and y must have the same shape")
    return float(np.arccos(np.clip(np.dot(x, y), -1.0, 1.0)))


class Projection(NamedTuple):
    point: np.ndarray
    dist: float
    focal: bool


def project_to_equator(x) -> Projection:
    """Nearest point of the equator ``{x_last = 0}`` and the distance to it.

    At a pole every equator point is nearest; the projection then returns
    ``e_0`` with ``focal=True``.
    """
    x = check_unit_vectors(x, "x")
    if x.ndim != 1:
        raise ValueError("project_to_equator takes a single vector; use project_cloud")
    p, dist, focal = project_cloud(x[None, :])
    return Projection(p[0], float(dist[0]), bool(focal[0]))


def project_cloud(points):
    """Vectorized :func:`project_to_equator`; returns ``(P, dist, focal)``."""
    X = np.asarray(points, dtype=float)
    P = X.copy()
    P[:, -1] = 0.0
    norms = np.linalg.norm(P, axis=1)
    focal = norms == 0.0
    safe = np.where(focal, 1.0, norms)
    P /= safe[:, None]
    P[focal] = 0.0
    P[focal, 0] = 1.0
    dist = np.abs(np.arcsin(np.clip(X[:, -1], -1.0, 1.0)))
    dist[focal] = math.pi / 2
    return P, dist, focal


def empirical_complement(cloud: SampleCloud, eps: float, distance_to_locus=None):
    """Fraction of the cloud farther than ``eps`` from a locus, with its standard error.

    Parameters
    ----------
    cloud : SampleCloud
    eps : float
        Tube radius, ``>= 0``.
    distance_to_locus : callable, optional
        Maps the ``(N, n + 1)`` point array to ``N`` nonnegative distances.
        Defaults to the distance to the equator.

    Returns
    -------
    (float, float)
        Empirical mass and its binomial standard error.
    """
    eps = check_real(eps, "eps", low=0.0)
    if distance_to_locus is None:
        if eps > math.pi / 2:
            raise ValueError(f"eps must lie in [0, pi/2] for the equator, got {eps}")
        dist = cloud.distances
    else:
        dist = np.asarray(distance_to_locus(cloud.points), dtype=float)
        if dist.shape != (cloud.N,) or not np.all(dist >= 0):
            raise ValueError("distance_to_locus must return N nonnegative distances")
    p_hat = float(np.mean(dist > eps))
    return p_hat, math.sqrt(p_hat * (1.0 - p_hat) / cloud.N)


def empirical_transport_cost(cloud: SampleCloud, order: int = 1):
    """Mean of ``dist^order`` over non-focal points, with its standard error."""
    dist = cloud.distances[np.abs(cloud.points[:, -1]) < 1.0] ** order
    return float(dist.mean()), float(dist.std(ddof=1) / math.sqrt(dist.size))


class EquatorProjector(TransformerMixin, BaseEstimator):
    """Transformer mapping points of ``S^n`` to their nearest equator points.

    ``fit`` only records the ambient dimension. Use :meth:`project` to also
    get the distances and the focal-point mask.
    """

    def __init__(self, atol=1e-9):
        self.atol = atol

    def fit(self, X, y=None):
        X = check_unit_vectors(np.atleast_2d(X), "X", atol=self.atol)
        self.n_features_in_ = X.shape[1]
        return self

    def project(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_unit_vectors(np.atleast_2d(X), "X", atol=self.atol)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} coordinates, got {X.shape[1]}")
        return project_cloud(X)

    def transform(self, X):
        return self.project(X)[0]
