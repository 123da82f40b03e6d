"""Full-data evaluation of learned (or discrete) maps: metric rows, cycle
consistency, amortization on fresh samples, parameter sweeps and the
sample-size convergence smoke test."""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .distortion import delta_total
from .gw import Coupling, barycentric_maps, entropic_gw
from .io import atomic_write_text, csv_text
from .mmd import mmd
from .nnmap import MapModel
from .shapes import diameter, heart_pair
from .train import GmmdConfig, KernelPair, fit_kernels, loss_from_images, metrics_for, train

METHODS = ("gmmd", "gw")


@dataclass(frozen=True)
class MetricsRow:
    """One line of ``metrics.csv``.

    ``cycle_x`` is ``mean |x - g(f(x))| / diam(X)`` (and symmetrically for
    ``cycle_y``); ``seconds`` is left empty unless timing was requested so
    that reruns produce identical files.
    """

    method: str
    param: float
    objective: float
    mmd_x: float
    mmd_y: float
    delta: float
    cycle_x: Optional[float]
    cycle_y: Optional[float]
    n_eval: int
    seconds: Optional[float] = None
    label: str = ""

    def cells(self):
        return [getattr(self, f.name) for f in fields(self)]


METRICS_HEADER = [f.name for f in fields(MetricsRow)]


def cycle_score(A, A_back) -> float:
    """Mean Euclidean round-trip error, normalized by the diameter of ``A``."""
    A = np.asarray(A, dtype=np.float64)
    err = np.linalg.norm(A - np.asarray(A_back, dtype=np.float64), axis=1).mean()
    diam = diameter(A)
    return float(err / diam) if diam > 0 else float(err)


def _mmd(spec, A, B) -> float:
    return mmd(spec, A, B).mmd


def evaluate_maps(f: MapModel, g: MapModel, X, Y, kernels: KernelPair, cfg: GmmdConfig,
                  label: str = "", seconds: Optional[float] = None) -> MetricsRow:
    """Every column on the full clouds (no minibatching)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    FX, GY = f(X), g(Y)
    loss = loss_from_images(X, Y, FX, GY, kernels.kx, kernels.ky, cfg)
    if cfg.mmd_power == 1:
        mx, my = loss.mmd_x, loss.mmd_y
    else:
        mx, my = _mmd(kernels.kx, X, GY), _mmd(kernels.ky, FX, Y)
    return MetricsRow(
        method="gmmd",
        param=cfg.lambda_x,
        objective=loss.total,
        mmd_x=mx,
        mmd_y=my,
        delta=loss.delta,
        cycle_x=cycle_score(X, g(FX)),
        cycle_y=cycle_score(Y, f(GY)),
        n_eval=min(len(X), len(Y)),
        seconds=seconds,
        label=label,
    )


def shared_rows(A, B) -> int:
    """Number of rows of ``A`` that occur bit-for-bit in ``B``."""
    seen = {row.tobytes() for row in np.ascontiguousarray(B, dtype=np.float64)}
    return sum(row.tobytes() in seen for row in np.ascontiguousarray(A, dtype=np.float64))


def amortization_eval(f: MapModel, g: MapModel, fresh_X, fresh_Y, kernels: KernelPair,
                      cfg: GmmdConfig, train_X=None, train_Y=None) -> MetricsRow:
    """``evaluate_maps`` on held-out clouds, refusing any training point."""
    if train_X is not None and shared_rows(fresh_X, train_X):
        raise ValueError("fresh X shares points with the training set")
    if train_Y is not None and shared_rows(fresh_Y, train_Y):
        raise ValueError("fresh Y shares points with the training set")
    return evaluate_maps(f, g, fresh_X, fresh_Y, kernels, cfg, label="amortization")


def evaluate_gw_maps(FX, GY, X, Y, kernels: KernelPair, cfg: GmmdConfig, epsilon: float,
                     gw_value: float, coupling: Coupling | np.ndarray | None = None,
                     label: str = "", seconds: Optional[float] = None) -> MetricsRow:
    """Metric row for barycentric images ``FX = f~(X)``, ``GY = g~(Y)``.

    The barycentric maps are only defined on the sample points, so the round
    trip uses the coupling's linear extension: ``g~(f~(x_i)) = sum_j P_ij g~(y_j)``
    with ``P`` the row-normalized plan (columns likewise). Without a coupling
    the cycle columns are left empty.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    FX = np.asarray(FX, dtype=np.float64)
    GY = np.asarray(GY, dtype=np.float64)
    dX, dY = metrics_for(cfg, kernels.kx, kernels.ky)
    parts = delta_total(dX, dY, X, Y, FX, GY)
    cycle_x = cycle_y = None
    if coupling is not None:
        pi = coupling.pi if isinstance(coupling, Coupling) else np.asarray(coupling, dtype=np.float64)
        P = pi / pi.sum(axis=1, keepdims=True)
        Q = (pi / pi.sum(axis=0, keepdims=True)).T
        cycle_x = cycle_score(X, P @ GY)
        cycle_y = cycle_score(Y, Q @ FX)
    return MetricsRow(
        method="gw",
        param=float(epsilon),
        objective=float(gw_value),
        mmd_x=_mmd(kernels.kx, X, GY),
        mmd_y=_mmd(kernels.ky, FX, Y),
        delta=parts.total,
        cycle_x=cycle_x,
        cycle_y=cycle_y,
        n_eval=min(len(X), len(Y)),
        seconds=seconds,
        label=label,
    )


@dataclass
class GwRun:
    result: object  # GwResult
    FX: np.ndarray
    GY: np.ndarray
    row: MetricsRow


def run_gw(X, Y, epsilon: float, kernels: KernelPair, cfg: GmmdConfig, outer_iter: int = 1000,
           tol: float = 1e-9, record_time: bool = False) -> GwRun:
    """Entropic GW on Euclidean distance matrices, barycentric maps, metric row."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    t0 = time.perf_counter()
    res = entropic_gw(cdist(X, X), cdist(Y, Y), epsilon=epsilon, outer_iter=outer_iter, tol=tol)
    FX, GY = barycentric_maps(res.coupling, X, Y)
    seconds = time.perf_counter() - t0 if record_time else None
    row = evaluate_gw_maps(FX, GY, X, Y, kernels, cfg, epsilon, res.gw_cost, res.coupling,
                           seconds=seconds)
    return GwRun(res, FX, GY, row)


def sweep_clouds(X, Y, params: Sequence[float], cfg: GmmdConfig, method: str = "gmmd",
                 threads: int = 1, record_time: bool = False) -> List[MetricsRow]:
    """One row per parameter: ``lambda_x = lambda_y = param`` (gmmd) or ``eps = param`` (gw).

    Entries are independent; with ``threads > 1`` they run concurrently and
    the rows still come back in parameter order.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    kernels = fit_kernels(X, Y, cfg)

    def one(param):
        if method == "gw":
            return run_gw(X, Y, param, kernels, cfg, record_time=record_time).row
        c = replace(cfg, lambda_x=float(param), lambda_y=float(param))
        t0 = time.perf_counter()
        f, g, _ = train(X, Y, c, kernels=kernels)
        seconds = time.perf_counter() - t0 if record_time else None
        return evaluate_maps(f, g, X, Y, kernels, c, seconds=seconds)

    if threads <= 1:
        return [one(p) for p in params]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, params))


def sweep(task: str, params: Sequence[float], cfg: GmmdConfig, method: str = "gmmd", n: int = 500,
          data_seed: int = 0, threads: int = 1, record_time: bool = False) -> List[MetricsRow]:
    """``sweep_clouds`` on a heart fixture pair (``rotate``, ``scale`` or ``embed3d``)."""
    X, Y = heart_pair(task, n, seed=data_seed)
    return sweep_clouds(X, Y, params, cfg, method, threads, record_time)


def lambda_grid() -> List[float]:
    """``2^i * 1e-3`` for ``i = 0..9``."""
    return [2 ** i * 1e-3 for i in range(10)]


def epsilon_grid() -> List[float]:
    """``5 * 10^-i`` for ``i = 0..4``."""
    return [5.0 * 10.0 ** -i for i in range(5)]


# ---------------------------------------------------------------------------
# convergence in the sample size


@dataclass(frozen=True)
class ConvergenceTable:
    sizes: tuple
    medians: tuple
    reference: float

    def slope(self) -> float:
        """Least-squares slope of ``log median`` against ``log n``."""
        return float(np.polyfit(np.log(self.sizes), np.log(self.medians), 1)[0])

    def nonincreasing(self) -> bool:
        return all(b <= a for a, b in zip(self.medians, self.medians[1:]))


def _seeds(base: int, *key) -> tuple:
    sx, sy = np.random.SeedSequence([base, *key]).spawn(2)
    return int(sx.generate_state(1)[0]), int(sy.generate_state(1)[0])


def convergence_smoke(f: MapModel, g: MapModel, gen_x: Callable[[int, int], np.ndarray],
                      gen_y: Callable[[int, int], np.ndarray], sizes: Sequence[int], ref_size: int,
                      seeds_per_size: int, kernels: KernelPair, cfg: GmmdConfig,
                      base_seed: int = 0) -> ConvergenceTable:
    """Median ``|L_n - L_ref|`` over seeded draws for fixed maps and kernels.

    ``gen_x(n, seed)`` and ``gen_y(n, seed)`` draw independent clouds. Every
    draw gets its own seed pair derived from ``(base_seed, n, s)``; the
    reference loss is computed once on a separate draw of ``ref_size`` points.
    """
    sizes = tuple(int(n) for n in sizes)
    if not sizes or ref_size <= max(sizes):
        raise ValueError(f"ref_size ({ref_size}) must exceed every size in {sizes}")
    if seeds_per_size < 1:
        raise ValueError("seeds_per_size must be >= 1")

    def loss(n, sx, sy):
        X, Y = gen_x(n, sx), gen_y(n, sy)
        return loss_from_images(X, Y, f(X), g(Y), kernels.kx, kernels.ky, cfg).total

    ref = loss(ref_size, *_seeds(base_seed, ref_size, 1 << 30))
    medians = []
    for n in sizes:
        devs = [abs(loss(n, *_seeds(base_seed, n, s)) - ref) for s in range(seeds_per_size)]
        medians.append(float(np.median(devs)))
    return ConvergenceTable(sizes, tuple(medians), float(ref))


# ---------------------------------------------------------------------------
# metrics.csv


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    return csv_text(METRICS_HEADER, [r.cells() for r in rows])


def write_metrics(path, rows: Sequence[MetricsRow], append: bool = False) -> None:
    """Atomic write; with ``append`` existing rows are kept (header checked)."""
    path = Path(path)
    text = metrics_csv(rows)
    if append and path.exists():
        old = path.read_text()
        first = old.splitlines()[0] if old else ""
        if first.split(",") != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected header {first!r}")
        text = old + text.split("\n", 1)[1]
    atomic_write_text(path, text)


def read_metrics(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
