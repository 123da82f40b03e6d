"""Gaussian-mixture kernels, Gram matrices and the metrics they induce."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

#: multipliers applied to the median distance when picking bandwidths
DEFAULT_MULTIPLIERS = (1e-4, 1e-3, 1e-2, 0.05, 0.25, 1.0, 4.0, 20.0, 100.0, 1000.0)

#: below this distance a metric is treated as non-differentiable (zero gradient)
COINCIDENT_TOL = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    """Uniform mixture of unit-peak Gaussian kernels.

    ``k(x, y) = mean_i exp(-|x - y|^2 / (2 sigma_i^2))``
    """

    bandwidths: tuple[float, ...]

    def __post_init__(self):
        bw = tuple(float(s) for s in np.atleast_1d(self.bandwidths))
        if len(bw) == 0:
            raise ValueError("KernelSpec needs at least one bandwidth")
        for s in bw:
            if not (np.isfinite(s) and s > 0):
                raise ValueError(f"bandwidths must be positive and finite, got {s!r}")
        object.__setattr__(self, "bandwidths", bw)

    def __len__(self):
        return len(self.bandwidths)

    def lipschitz(self) -> float:
        """Bound on ``|phi(x) - phi(y)|_H / |x - y|`` for the feature map."""
        return 1.0 / min(self.bandwidths)


def _as_cloud(a, name="points") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _as_point(x, name="x") -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a single point, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _check_dims(A: np.ndarray, B: np.ndarray):
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")


def sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, summed coordinate by coordinate.

    Coordinates are accumulated in index order so that a 1x1 call gives the
    same bits as any entry of a larger call.
    """
    out = np.zeros((A.shape[0], B.shape[0]))
    for c in range(A.shape[1]):
        diff = A[:, c][:, None] - B[:, c][None, :]
        out += diff * diff
    return out


def _mixture(spec: KernelSpec, sq: np.ndarray) -> np.ndarray:
    acc = np.zeros_like(sq)
    for s in spec.bandwidths:
        acc += np.exp(-sq / (2.0 * s * s))
    return acc / len(spec.bandwidths)


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = _as_point(x, "x")
    y = _as_point(y, "y")
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(_mixture(spec, sq_dists(x[None, :], y[None, :]))[0, 0])


def gram_matrix(spec: KernelSpec, A, B) -> np.ndarray:
    A = _as_cloud(A, "A")
    B = _as_cloud(B, "B")
    _check_dims(A, B)
    return _mixture(spec, sq_dists(A, B))


def gram_with_grad_coef(spec: KernelSpec, A: np.ndarray, B: np.ndarray):
    """Gram matrix ``K`` and ``H`` with ``dk(a_i, b_j)/da_i = -H_ij (a_i - b_j)``."""
    sq = sq_dists(A, B)
    K = np.zeros_like(sq)
    H = np.zeros_like(sq)
    for s in spec.bandwidths:
        e = np.exp(-sq / (2.0 * s * s))
        K += e
        H += e / (s * s)
    n = len(spec.bandwidths)
    return K / n, H / n


def _rho(K: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(2.0 - 2.0 * K, 0.0))


def induced_metric(spec: KernelSpec, x, y) -> float:
    """``sqrt(k(x,x) + k(y,y) - 2 k(x,y))``, the RKHS distance of the feature maps."""
    x = _as_point(x, "x")
    y = _as_point(y, "y")
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(_rho(_mixture(spec, sq_dists(x[None, :], y[None, :])))[0, 0])


def induced_distance_matrix(spec: KernelSpec, A, B) -> np.ndarray:
    return _rho(gram_matrix(spec, A, B))


# ---------------------------------------------------------------------------
# metric evaluators used by the distortion terms


class Metric:
    """Pairwise metric on point clouds.

    Subclasses that support gradients implement :meth:`pairwise_with_coef`, returning
    ``H`` such that ``d d(a_i, b_j) / d a_i = H_ij (a_i - b_j)``.
    """

    differentiable = False

    def pairwise(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def pairwise_with_coef(self, A: np.ndarray, B: np.ndarray):
        raise TypeError(f"{type(self).__name__} does not provide gradients")

    def vjp(self, A, B, W):
        """Pull back weights ``W`` (n x m) on ``d(A_i, B_j)`` to ``(grad_A, grad_B)``."""
        _, H = self.pairwise_with_coef(A, B)
        return pullback(H, W, A, B)


def pullback(H, W, A, B):
    """Gradients of ``sum_ij W_ij d(A_i, B_j)`` given ``H`` from ``pairwise_with_coef``."""
    C = W * H
    gA = C.sum(axis=1)[:, None] * A - C @ B
    gB = C.sum(axis=0)[:, None] * B - C.T @ A
    return gA, gB


class EuclideanMetric(Metric):
    differentiable = True

    def pairwise(self, A, B):
        return np.sqrt(sq_dists(A, B))

    def pairwise_with_coef(self, A, B):
        D = self.pairwise(A, B)
        H = np.zeros_like(D)
        mask = D >= COINCIDENT_TOL
        H[mask] = 1.0 / D[mask]
        return D, H

    def __repr__(self):
        return "EuclideanMetric()"


class KernelMetric(Metric):
    """The kernel-induced metric ``sqrt(2 - 2 k(x, y))``."""

    differentiable = True

    def __init__(self, spec: KernelSpec):
        self.spec = spec

    def pairwise(self, A, B):
        return _rho(_mixture(self.spec, sq_dists(A, B)))

    def pairwise_with_coef(self, A, B):
        K, Hk = gram_with_grad_coef(self.spec, A, B)
        D = _rho(K)
        H = np.zeros_like(D)
        mask = D >= COINCIDENT_TOL
        H[mask] = Hk[mask] / D[mask]
        return D, H

    def __repr__(self):
        return f"KernelMetric({self.spec!r})"


class CallableMetric(Metric):
    """Wraps a point-wise distance function; values only, no gradients."""

    def __init__(self, fn: Callable[[np.ndarray, np.ndarray], float]):
        self.fn = fn

    def pairwise(self, A, B):
        out = np.empty((A.shape[0], B.shape[0]))
        for i in range(A.shape[0]):
            for j in range(B.shape[0]):
                out[i, j] = self.fn(A[i], B[j])
        return out


MetricLike = Union[Metric, str, Callable]


def as_metric(metric: MetricLike) -> Metric:
    if isinstance(metric, Metric):
        return metric
    if isinstance(metric, KernelSpec):
        return KernelMetric(metric)
    if metric == "euclidean":
        return EuclideanMetric()
    if callable(metric):
        return CallableMetric(metric)
    raise ValueError(f"unknown metric {metric!r}")


def median_bandwidths(
    cloud,
    base_metric: MetricLike = "euclidean",
    multipliers: Sequence[float] = DEFAULT_MULTIPLIERS,
    subsample: int = 1000,
    seed: int = 0,
) -> KernelSpec:
    """Median heuristic: ``sigma_i = median pairwise distance * multiplier_i``.

    The median is taken over the off-diagonal pairs of at most ``subsample``
    seeded-uniformly chosen rows. An all-identical cloud has median 0; the
    multipliers are then used as bandwidths directly.
    """
    X = _as_cloud(cloud, "cloud")
    n = X.shape[0]
    if n < 2:
        raise ValueError("median_bandwidths needs at least 2 points")
    multipliers = [float(m) for m in multipliers]
    if not multipliers:
        raise ValueError("multipliers must be nonempty")
    if n > subsample:
        idx = np.sort(np.random.default_rng(seed).choice(n, size=subsample, replace=False))
        X = X[idx]
    D = as_metric(base_metric).pairwise(X, X)
    iu = np.triu_indices(X.shape[0], k=1)
    med = float(np.median(D[iu]))
    if med == 0.0:
        return KernelSpec(tuple(multipliers))
    return KernelSpec(tuple(med * m for m in multipliers))
