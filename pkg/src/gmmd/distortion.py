"""First-order metric distortion terms and their gradients.

All three terms are V-statistics: averages over every ordered pair,
diagonal included (where it vanishes identically for the within-space terms).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import MetricLike, _as_cloud, as_metric, pullback

_BLOCK = 1024


@dataclass(frozen=True)
class DistortionBreakdown:
    delta_x: float
    delta_y: float
    delta_xy: float

    @property
    def total(self) -> float:
        return self.delta_x + self.delta_y + self.delta_xy


def _abs_diff_mean(d1, A1, B1, d2, A2, B2) -> float:
    """``mean_ij |d1(A1_i, B1_j) - d2(A2_i, B2_j)|`` in row blocks."""
    n, m = A1.shape[0], B1.shape[0]
    total = 0.0
    for s in range(0, n, _BLOCK):
        e = s + _BLOCK
        total += float(np.abs(d1.pairwise(A1[s:e], B1) - d2.pairwise(A2[s:e], B2)).sum())
    return total / (n * m)


def _pair(a, b, na, nb):
    a = _as_cloud(a, na)
    b = _as_cloud(b, nb)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"size mismatch: |{na}|={a.shape[0]} but |{nb}|={b.shape[0]}")
    if a.shape[0] == 0:
        raise ValueError(f"{na} is empty")
    return a, b


def delta_x(dX: MetricLike, dY: MetricLike, X, FX) -> float:
    """``mean_ij |d_X(x_i, x_j) - d_Y(f(x_i), f(x_j))|``."""
    X, FX = _pair(X, FX, "X", "FX")
    dX, dY = as_metric(dX), as_metric(dY)
    return _abs_diff_mean(dX, X, X, dY, FX, FX)


def delta_y(dX: MetricLike, dY: MetricLike, Y, GY) -> float:
    """``mean_ij |d_Y(y_i, y_j) - d_X(g(y_i), g(y_j))|``."""
    Y, GY = _pair(Y, GY, "Y", "GY")
    dX, dY = as_metric(dX), as_metric(dY)
    return _abs_diff_mean(dY, Y, Y, dX, GY, GY)


def delta_xy(dX: MetricLike, dY: MetricLike, X, Y, FX, GY) -> float:
    """``mean_ij |d_X(x_i, g(y_j)) - d_Y(f(x_i), y_j)|``."""
    X, FX = _pair(X, FX, "X", "FX")
    Y, GY = _pair(Y, GY, "Y", "GY")
    dX, dY = as_metric(dX), as_metric(dY)
    return _abs_diff_mean(dX, X, GY, dY, FX, Y)


def delta_total(dX: MetricLike, dY: MetricLike, X, Y, FX, GY) -> DistortionBreakdown:
    return DistortionBreakdown(
        delta_x=delta_x(dX, dY, X, FX),
        delta_y=delta_y(dX, dY, Y, GY),
        delta_xy=delta_xy(dX, dY, X, Y, FX, GY),
    )


def delta_with_grads(dX: MetricLike, dY: MetricLike, X, Y, FX, GY):
    """Breakdown plus gradients of the total w.r.t. ``FX`` and ``GY``.

    The subgradient of ``|u|`` at 0 is 0; metric gradients vanish at
    coincident points.
    """
    X, FX = _pair(X, FX, "X", "FX")
    Y, GY = _pair(Y, GY, "Y", "GY")
    dX, dY = as_metric(dX), as_metric(dY)
    for d in (dX, dY):
        if not d.differentiable:
            raise TypeError(f"metric {d!r} is not differentiable")
    n, m = X.shape[0], Y.shape[0]

    DFX, H_fx = dY.pairwise_with_coef(FX, FX)
    r_x = dX.pairwise(X, X) - DFX
    DGY, H_gy = dX.pairwise_with_coef(GY, GY)
    r_y = dY.pairwise(Y, Y) - DGY
    DXG, H_xg = dX.pairwise_with_coef(X, GY)
    DFY, H_fy = dY.pairwise_with_coef(FX, Y)
    r_xy = DXG - DFY

    parts = DistortionBreakdown(
        delta_x=float(np.abs(r_x).sum() / (n * n)),
        delta_y=float(np.abs(r_y).sum() / (m * m)),
        delta_xy=float(np.abs(r_xy).sum() / (n * m)),
    )

    a, b = pullback(H_fx, -np.sign(r_x) / (n * n), FX, FX)
    grad_fx = a + b
    a, b = pullback(H_gy, -np.sign(r_y) / (m * m), GY, GY)
    grad_gy = a + b
    s_xy = np.sign(r_xy) / (n * m)
    _, b = pullback(H_xg, s_xy, X, GY)
    grad_gy = grad_gy + b
    a, _ = pullback(H_fy, -s_xy, FX, Y)
    grad_fx = grad_fx + a
    return parts, grad_fx, grad_gy


def delta_grads_wrt_mapped(dX: MetricLike, dY: MetricLike, X, Y, FX, GY):
    _, gfx, ggy = delta_with_grads(dX, dY, X, Y, FX, GY)
    return gfx, ggy
