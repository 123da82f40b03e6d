"""GMMD objective and the minibatch training loop for a pair of maps f: X->Y, g: Y->X."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import List, Sequence, Tuple

import numpy as np

from .distortion import delta_total, delta_with_grads
from .kernels import DEFAULT_MULTIPLIERS, EuclideanMetric, KernelMetric, KernelSpec, median_bandwidths
from .mmd import mmd, mmd_with_grad
from .nnmap import AdamState, MapModel, adam_step, map_backward, map_forward, mlp_init

log = logging.getLogger(__name__)

METRIC_MODES = ("kernel_induced", "euclidean")


@dataclass
class GmmdConfig:
    lambda_x: float = 0.064
    lambda_y: float = 0.064
    lr: float = 1e-3
    epochs: int = 3000
    batch_size: int = 256
    seed: int = 0
    bandwidth_multipliers: Tuple[float, ...] = DEFAULT_MULTIPLIERS
    mmd_power: int = 1
    hidden_dims: Tuple[int, ...] = (200, 200, 200)
    metric_mode: str = "kernel_induced"
    median_subsample: int = 1000

    def __post_init__(self):
        self.bandwidth_multipliers = tuple(float(m) for m in self.bandwidth_multipliers)
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        self.validate()

    def validate(self):
        for name in ("lambda_x", "lambda_y"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a finite nonnegative number, got {v!r}")
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise ValueError(f"lr must be positive, got {self.lr!r}")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValueError(f"epochs must be a nonnegative integer, got {self.epochs!r}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError(f"batch_size must be a positive integer, got {self.batch_size!r}")
        if self.mmd_power not in (1, 2):
            raise ValueError(f"mmd_power must be 1 or 2, got {self.mmd_power!r}")
        if self.metric_mode not in METRIC_MODES:
            raise ValueError(f"metric_mode must be one of {METRIC_MODES}, got {self.metric_mode!r}")
        if not self.bandwidth_multipliers or min(self.bandwidth_multipliers) <= 0:
            raise ValueError("bandwidth_multipliers must be nonempty and positive")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims must be positive")
        if self.median_subsample < 2:
            raise ValueError("median_subsample must be >= 2")

    @classmethod
    def from_dict(cls, doc: dict) -> "GmmdConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise KeyError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bandwidth_multipliers"] = list(self.bandwidth_multipliers)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass(frozen=True)
class KernelPair:
    kx: KernelSpec
    ky: KernelSpec


def fit_kernels(X, Y, cfg: GmmdConfig) -> KernelPair:
    """Median-heuristic bandwidths on each space (Euclidean base metric)."""
    return KernelPair(
        median_bandwidths(X, "euclidean", cfg.bandwidth_multipliers, cfg.median_subsample, cfg.seed),
        median_bandwidths(Y, "euclidean", cfg.bandwidth_multipliers, cfg.median_subsample, cfg.seed),
    )


def metrics_for(cfg: GmmdConfig, kx: KernelSpec, ky: KernelSpec):
    if cfg.metric_mode == "kernel_induced":
        return KernelMetric(kx), KernelMetric(ky)
    return EuclideanMetric(), EuclideanMetric()


@dataclass(frozen=True)
class LossBreakdown:
    mmd_x: float
    mmd_y: float
    delta_x: float
    delta_y: float
    delta_xy: float
    total: float

    @classmethod
    def assemble(cls, mmd_x, mmd_y, delta_x, delta_y, delta_xy, lambda_x, lambda_y):
        total = lambda_x * mmd_x + lambda_y * mmd_y + delta_x + delta_y + delta_xy
        return cls(mmd_x, mmd_y, delta_x, delta_y, delta_xy, total)

    @property
    def delta(self) -> float:
        return self.delta_x + self.delta_y + self.delta_xy

    def as_tuple(self):
        return (self.mmd_x, self.mmd_y, self.delta_x, self.delta_y, self.delta_xy, self.total)


@dataclass
class LossCaches:
    FX: np.ndarray
    GY: np.ndarray
    cache_f: object
    cache_g: object


@dataclass
class TrainHistory:
    losses: List[LossBreakdown] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)

    def __len__(self):
        return len(self.losses)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, detail: str):
        super().__init__(f"non-finite loss or gradient at epoch {epoch}: {detail}")
        self.epoch = epoch


def _mmd_value(spec, A, B, power):
    v = mmd(spec, A, B)
    return v.mmd if power == 1 else v.mmd_squared


def loss_from_images(X, Y, FX, GY, kx: KernelSpec, ky: KernelSpec, cfg: GmmdConfig) -> LossBreakdown:
    """Objective value given the mapped clouds ``FX = f(X)`` and ``GY = g(Y)``."""
    dX, dY = metrics_for(cfg, kx, ky)
    parts = delta_total(dX, dY, X, Y, FX, GY)
    return LossBreakdown.assemble(
        _mmd_value(kx, X, GY, cfg.mmd_power),
        _mmd_value(ky, FX, Y, cfg.mmd_power),
        parts.delta_x, parts.delta_y, parts.delta_xy,
        cfg.lambda_x, cfg.lambda_y,
    )


def gmmd_loss(batch_x, batch_y, f: MapModel, g: MapModel, kx: KernelSpec, ky: KernelSpec,
              cfg: GmmdConfig):
    FX, cache_f = map_forward(f, batch_x)
    GY, cache_g = map_forward(g, batch_y)
    loss = loss_from_images(batch_x, batch_y, FX, GY, kx, ky, cfg)
    return loss, LossCaches(FX, GY, cache_f, cache_g)


def loss_and_grads(batch_x, batch_y, f: MapModel, g: MapModel, kx: KernelSpec, ky: KernelSpec,
                   cfg: GmmdConfig):
    """One loss evaluation and the parameter gradients of both maps."""
    X = np.asarray(batch_x, dtype=np.float64)
    Y = np.asarray(batch_y, dtype=np.float64)
    FX, cache_f = map_forward(f, X)
    GY, cache_g = map_forward(g, Y)
    if not (np.all(np.isfinite(FX)) and np.all(np.isfinite(GY))):
        raise FloatingPointError("non-finite map outputs")
    dX, dY = metrics_for(cfg, kx, ky)
    mmd_x, g_gy = mmd_with_grad(kx, GY, X, cfg.mmd_power)
    mmd_y, g_fx = mmd_with_grad(ky, FX, Y, cfg.mmd_power)
    parts, d_fx, d_gy = delta_with_grads(dX, dY, X, Y, FX, GY)
    loss = LossBreakdown.assemble(mmd_x, mmd_y, parts.delta_x, parts.delta_y, parts.delta_xy,
                                  cfg.lambda_x, cfg.lambda_y)
    grad_fx = cfg.lambda_y * g_fx + d_fx
    grad_gy = cfg.lambda_x * g_gy + d_gy
    if not (np.all(np.isfinite(grad_fx)) and np.all(np.isfinite(grad_gy))):
        raise FloatingPointError("non-finite gradient with respect to mapped points")
    return loss, map_backward(f, cache_f, grad_fx), map_backward(g, cache_g, grad_gy)


def gmmd_loss_grads(batch_x, batch_y, f, g, kx, ky, cfg):
    _, grads_f, grads_g = loss_and_grads(batch_x, batch_y, f, g, kx, ky, cfg)
    return grads_f, grads_g


def init_maps(dx: int, dy: int, cfg: GmmdConfig) -> Tuple[MapModel, MapModel]:
    sf, sg = np.random.SeedSequence(cfg.seed).spawn(2)
    f = mlp_init(dx, cfg.hidden_dims, dy, seed=int(sf.generate_state(1)[0]))
    g = mlp_init(dy, cfg.hidden_dims, dx, seed=int(sg.generate_state(1)[0]))
    return f, g


def _cycling_batches(rng: np.random.Generator, n: int):
    """Endless stream of indices over reshuffled passes of ``range(n)``."""
    buf = np.empty(0, dtype=np.int64)
    size = yield
    while True:
        while buf.size < size:
            buf = np.concatenate([buf, rng.permutation(n)])
        out, buf = buf[:size], buf[size:]
        size = yield out


def _mean_breakdown(items: Sequence[LossBreakdown]) -> LossBreakdown:
    arr = np.array([b.as_tuple() for b in items])
    return LossBreakdown(*(float(v) for v in arr.mean(axis=0)))


def train(X, Y, cfg: GmmdConfig, kernels: KernelPair | None = None,
          init: Tuple[MapModel, MapModel] | None = None, callback=None):
    """Minibatch training with simultaneous Adam updates of ``f`` and ``g``.

    An epoch is one pass over the larger cloud; batches of the smaller cloud
    are drawn from a reshuffled cyclic stream. Returns ``(f, g, history)``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] == 0 or Y.shape[0] == 0:
        raise ValueError("X and Y must be nonempty (n, d) arrays")
    n, m = X.shape[0], Y.shape[0]
    if kernels is None:
        kernels = fit_kernels(X, Y, cfg)
    f, g = init if init is not None else init_maps(X.shape[1], Y.shape[1], cfg)
    history = TrainHistory()
    if cfg.epochs == 0:
        return f, g, history

    b = cfg.batch_size
    if b > min(n, m):
        warnings.warn(f"batch_size {b} exceeds dataset size; clipping per dataset", stacklevel=2)
    big_is_x = n >= m
    n_big, n_small = (n, m) if big_is_x else (m, n)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    small_stream = _cycling_batches(rng, n_small)
    next(small_stream)

    state_f, state_g = AdamState.zeros_like(f), AdamState.zeros_like(g)
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_big)
        batch_losses = []
        for start in range(0, n_big, b):
            big_idx = order[start:start + b]
            small_idx = small_stream.send(min(len(big_idx), n_small))
            ix, iy = (big_idx, small_idx) if big_is_x else (small_idx, big_idx)
            try:
                loss, gf, gg = loss_and_grads(X[ix], Y[iy], f, g, kernels.kx, kernels.ky, cfg)
            except FloatingPointError as exc:
                raise TrainingDiverged(epoch, str(exc)) from exc
            if not math.isfinite(loss.total):
                raise TrainingDiverged(epoch, f"loss {loss.total}")
            f, state_f = adam_step(state_f, f, gf, cfg.lr)
            g, state_g = adam_step(state_g, g, gg, cfg.lr)
            batch_losses.append(loss)
        history.losses.append(_mean_breakdown(batch_losses))
        history.seconds.append(time.perf_counter() - t0)
        if callback is not None:
            callback(epoch, history.losses[-1])
        if epoch % 100 == 0 or epoch == cfg.epochs - 1:
            log.debug("epoch %d loss %.6g", epoch, history.losses[-1].total)
    return f, g, history


def loss_continuity_probe(f: MapModel, g: MapModel, X, Y, kernels: KernelPair, deltas: Sequence[float],
                          cfg: GmmdConfig, direction=None):
    """Loss change when every output of ``f`` is shifted by ``delta * direction``.

    ``direction`` defaults to the all-ones vector (sup-norm 1). Returns rows
    ``(delta, deviation, bound)`` where ``bound = (2 L lambda_y + 3 L_d) delta``;
    ``L`` is the Lipschitz constant of the kernel feature map of ``Y`` and
    ``L_d`` that of the distortion metric on ``Y`` (1 for Euclidean).
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    FX = f(X)
    GY = g(Y)
    v = np.ones(FX.shape[1]) if direction is None else np.asarray(direction, dtype=np.float64)
    v = v / np.max(np.abs(v))
    base = loss_from_images(X, Y, FX, GY, kernels.kx, kernels.ky, cfg).total
    lip_k = kernels.ky.lipschitz()
    lip_d = lip_k if cfg.metric_mode == "kernel_induced" else 1.0
    lip_v = float(np.linalg.norm(v))  # Euclidean length of the shift per unit delta
    rows = []
    for delta in deltas:
        shifted = loss_from_images(X, Y, FX + delta * v, GY, kernels.kx, kernels.ky, cfg).total
        bound = (2.0 * lip_k * cfg.lambda_y + 3.0 * lip_d) * lip_v * delta
        rows.append((float(delta), abs(shifted - base), bound))
    return rows
