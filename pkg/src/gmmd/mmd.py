"""Biased (V-statistic) MMD estimators and their gradients w.r.t. sample points."""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from .kernels import KernelSpec, _as_cloud, _check_dims, _mixture, gram_with_grad_coef, sq_dists

#: below this MMD value the gradient of the unsquared MMD is reported as zero
GRAD_GUARD = 1e-8

# rows per block when summing large Gram matrices
_BLOCK = 1024


@dataclass(frozen=True)
class MmdValue:
    mmd: float
    mmd_squared: float


def _gram_sum(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> float:
    total = 0.0
    for start in range(0, A.shape[0], _BLOCK):
        total += float(_mixture(spec, sq_dists(A[start:start + _BLOCK], B)).sum())
    return total


def _validate(A, B):
    A = _as_cloud(A, "A")
    B = _as_cloud(B, "B")
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("MMD needs nonempty point clouds")
    _check_dims(A, B)
    return A, B


def mmd_squared_biased(spec: KernelSpec, A, B) -> float:
    A, B = _validate(A, B)
    n, m = A.shape[0], B.shape[0]
    return (
        _gram_sum(spec, A, A) / (n * n)
        + _gram_sum(spec, B, B) / (m * m)
        - 2.0 * _gram_sum(spec, A, B) / (n * m)
    )


def mmd(spec: KernelSpec, A, B) -> MmdValue:
    sq = mmd_squared_biased(spec, A, B)
    return MmdValue(mmd=sqrt(max(sq, 0.0)), mmd_squared=sq)


def mmd_squared_with_grad(spec: KernelSpec, A, B):
    """``(mmd^2, d mmd^2 / dA)`` for the biased estimator."""
    A, B = _validate(A, B)
    n, m = A.shape[0], B.shape[0]
    Kaa, Haa = gram_with_grad_coef(spec, A, A)
    Kbb, _ = gram_with_grad_coef(spec, B, B)
    Kab, Hab = gram_with_grad_coef(spec, A, B)
    value = Kaa.sum() / (n * n) + Kbb.sum() / (m * m) - 2.0 * Kab.sum() / (n * m)
    # within-A term: each pair appears twice, dk/da_i = -H (a_i - a_j)
    g_aa = -(2.0 / (n * n)) * (Haa.sum(axis=1)[:, None] * A - Haa @ A)
    g_ab = (2.0 / (n * m)) * (Hab.sum(axis=1)[:, None] * A - Hab @ B)
    return float(value), g_aa + g_ab


def mmd_with_grad(spec: KernelSpec, A, B, power: int = 1):
    """Value and gradient of ``mmd`` (power 1) or ``mmd^2`` (power 2) w.r.t. ``A``."""
    sq, grad = mmd_squared_with_grad(spec, A, B)
    if power == 2:
        return sq, grad
    if power != 1:
        raise ValueError(f"power must be 1 or 2, got {power}")
    value = sqrt(max(sq, 0.0))
    if value < GRAD_GUARD:
        return value, np.zeros_like(grad)
    return value, grad / (2.0 * value)


def mmd_grad_wrt_points(spec: KernelSpec, A_mapped, B_target) -> np.ndarray:
    return mmd_with_grad(spec, A_mapped, B_target, power=1)[1]
