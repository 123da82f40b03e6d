"""Entropic Gromov-Wasserstein baseline (square loss) and barycentric maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Coupling:
    pi: np.ndarray
    p: np.ndarray
    q: np.ndarray
    converged: bool = True
    n_iter: int = 0

    def marginal_error(self) -> float:
        return float(max(np.abs(self.pi.sum(axis=1) - self.p).max(),
                         np.abs(self.pi.sum(axis=0) - self.q).max()))


def _check_marginal(v, n, name):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {v.shape}")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be strictly positive and finite")
    if abs(v.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to 1, sums to {v.sum()!r}")
    return v


def _lse(a, axis):
    amax = a.max(axis=axis, keepdims=True)
    out = np.log(np.exp(a - amax).sum(axis=axis, keepdims=True)) + amax
    return out.squeeze(axis)


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


ABSORB_THRESHOLD = 100.0
# kernel entries below this are zeroed: subnormal floats make matvecs ~10x slower
KERNEL_FLOOR = 1e-250
# epsilon-scaling schedule: geometric decrease, loose solves on the way down
SCALING_FACTOR = 0.5
STAGE_ITER = 200


def _stabilized(C, p, q, epsilon, f, g, max_iter, tol):
    """Sinkhorn on scalings of ``exp((f_i + g_j - C_ij) / eps)`` with absorption.

    Returns ``(pi, f, g, converged, n_iter)`` where ``(f, g)`` already include
    the final scalings.
    """
    n, m = C.shape
    log_p, log_q = np.log(p), np.log(q)
    S = -C / epsilon

    def log_sweep(f):
        g = epsilon * (log_q - _lse(S + f[:, None] / epsilon, axis=0))
        return epsilon * (log_p - _lse(S + g[None, :] / epsilon, axis=1)), g

    def kernel(f, g):
        K = np.exp(S + (f[:, None] + g[None, :]) / epsilon)
        K[K < KERNEL_FLOOR] = 0.0
        return K

    f, g = log_sweep(f)
    K = kernel(f, g)
    u, v = np.ones(n), np.ones(m)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Ktu = K.T @ u
        # column sums of the current plan come for free before the v update
        if np.abs(v * Ktu - q).max() < tol:
            converged = True
            it -= 1
            break
        v = q / Ktu
        u = p / (K @ v)
        with np.errstate(divide="ignore"):
            lu, lv = np.log(u), np.log(v)
        if not (np.all(np.isfinite(lu)) and np.all(np.isfinite(lv))):
            # a scaling collapsed: redo this sweep exactly in the log domain
            f, g = log_sweep(f)
        elif max(np.abs(lu).max(), np.abs(lv).max()) > ABSORB_THRESHOLD:
            f, g = f + epsilon * lu, g + epsilon * lv
        else:
            continue
        K = kernel(f, g)
        u, v = np.ones(n), np.ones(m)
    pi = u[:, None] * K * v[None, :]
    return pi, f + epsilon * np.log(u), g + epsilon * np.log(v), converged, it


def sinkhorn_log(cost, p, q, epsilon: float, max_iter: int = 10000, tol: float = 1e-9,
                 init=None, eps_scaling: bool = True):
    """Stabilized Sinkhorn; returns ``(Coupling, (f, g))`` with dual potentials.

    The plan is ``pi_ij = exp((f_i + g_j - C_ij) / eps)``. Iterations run on
    scalings of a kernel built from the current potentials; a scaling that
    leaves ``[e^-100, e^100]`` is absorbed into the potentials, so nothing
    over- or underflows even for tiny ``eps``. Without a warm start
    (``init``) and with ``eps_scaling`` the potentials are first brought close
    by loose solves at ``eps = span(C), span(C)/2, ...``; plain Sinkhorn at a
    small ``eps`` moves mass by only ``~eps`` per sweep. Iteration stops once
    the column-marginal violation (rows are exact after each sweep) is below
    ``tol``; ``n_iter`` counts sweeps at the target ``eps`` only.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or not np.all(np.isfinite(C)):
        raise ValueError("cost must be a finite 2-D matrix")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon!r}")
    n, m = C.shape
    p = _check_marginal(p, n, "p")
    q = _check_marginal(q, m, "q")
    if init is None:
        f, g = np.zeros(n), np.zeros(m)
        stage = float(C.max() - C.min()) if eps_scaling else 0.0
        while stage > epsilon:
            _, f, g, _, _ = _stabilized(C, p, q, stage, f, g, STAGE_ITER, 1e-3 * q.min())
            stage *= SCALING_FACTOR
    else:
        f, g = (np.array(a, dtype=np.float64) for a in init)
    pi, f, g, converged, it = _stabilized(C, p, q, epsilon, f, g, max_iter, tol)
    return Coupling(pi, p, q, converged, it), (f, g)


def sinkhorn(cost, p, q, epsilon: float, max_iter: int = 10000, tol: float = 1e-9) -> Coupling:
    return sinkhorn_log(cost, p, q, epsilon, max_iter, tol)[0]


def _check_distance_matrix(C, name):
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.all(np.isfinite(C)):
        raise ValueError(f"{name} has non-finite entries")
    if not np.allclose(C, C.T, rtol=0, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.any(np.diag(C) != 0) or np.any(C < 0):
        raise ValueError(f"{name} must be nonnegative with a zero diagonal")
    return C


def gw_tensor_parts(CX, CY, p, q):
    """Constant term of the square-loss local cost: ``(CX^2 p)_i + (CY^2 q)_j``."""
    return (CX ** 2) @ p[:, None] + ((CY ** 2) @ q)[None, :]


def local_cost(const, CX, CY, pi):
    """``M_ij = sum_kl (CX_ik - CY_jl)^2 pi_kl`` for ``pi`` with marginals ``(p, q)``."""
    return const - 2.0 * CX @ pi @ CY.T


def gw_cost(CX, CY, pi, p=None, q=None) -> float:
    """Square-loss GW objective ``sum_ijkl (CX_ik - CY_jl)^2 pi_ij pi_kl``."""
    CX = np.asarray(CX, dtype=np.float64)
    CY = np.asarray(CY, dtype=np.float64)
    p = pi.sum(axis=1) if p is None else p
    q = pi.sum(axis=0) if q is None else q
    return float((local_cost(gw_tensor_parts(CX, CY, p, q), CX, CY, pi) * pi).sum())


def entropic_objective(CX, CY, pi, epsilon) -> float:
    """GW cost plus ``eps * sum pi (log pi - 1)``."""
    nz = pi > 0
    return gw_cost(CX, CY, pi) + epsilon * float((pi[nz] * (np.log(pi[nz]) - 1.0)).sum())


@dataclass
class GwResult:
    coupling: Coupling
    gw_cost: float
    n_outer: int
    converged: bool
    objective_trace: list


def entropic_gw(CX, CY, p=None, q=None, epsilon: float = 5e-4, outer_iter: int = 1000,
                tol: float = 1e-9, inner_iter: int = 10000, inner_tol: float = 1e-9,
                trace: bool = False) -> GwResult:
    """Projected-gradient entropic GW: repeat ``pi <- Sinkhorn(2 M(pi), eps)`` from ``p q^T``.

    Stops when the L1 change of the plan drops below ``tol``. Each projection
    is a cold epsilon-scaled solve: warm-starting from the previous step's
    potentials looks attractive but the cost moves enough between steps that
    Sinkhorn then crawls.
    """
    CX = _check_distance_matrix(CX, "CX")
    CY = _check_distance_matrix(CY, "CY")
    n, m = CX.shape[0], CY.shape[0]
    p = _check_marginal(uniform(n) if p is None else p, n, "p")
    q = _check_marginal(uniform(m) if q is None else q, m, "q")
    const = gw_tensor_parts(CX, CY, p, q)
    pi = np.outer(p, q)
    coupling = Coupling(pi, p, q, True, 0)
    objective = []
    converged = False
    it = 0
    for it in range(1, outer_iter + 1):
        # the GW gradient is 2 M(pi); this makes each step a majorize-minimize step
        grad = 2.0 * local_cost(const, CX, CY, pi)
        coupling = sinkhorn(grad, p, q, epsilon, inner_iter, inner_tol)
        change = float(np.abs(coupling.pi - pi).sum())
        pi = coupling.pi
        if trace:
            objective.append(entropic_objective(CX, CY, pi, epsilon))
        if change < tol:
            converged = True
            break
    cost = float((local_cost(const, CX, CY, pi) * pi).sum())
    return GwResult(coupling, cost, it, converged, objective)


def barycentric_maps(coupling, X, Y):
    """``f(x_i) = sum_j pi_ij y_j / sum_j pi_ij`` and the transposed map on ``Y``."""
    pi = coupling.pi if isinstance(coupling, Coupling) else np.asarray(coupling, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if pi.shape != (X.shape[0], Y.shape[0]):
        raise ValueError(f"coupling shape {pi.shape} does not match |X|={X.shape[0]}, |Y|={Y.shape[0]}")
    rows = pi.sum(axis=1)
    cols = pi.sum(axis=0)
    if np.any(rows <= 0):
        raise ValueError(f"coupling row {int(np.argmax(rows <= 0))} has zero mass")
    if np.any(cols <= 0):
        raise ValueError(f"coupling column {int(np.argmax(cols <= 0))} has zero mass")
    # normalize before averaging so permutation plans reproduce targets exactly
    return (pi / rows[:, None]) @ Y, (pi / cols[None, :]).T @ X
