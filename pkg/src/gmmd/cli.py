"""Command-line interface: ``gmmd {gen,train,gw,eval,sweep,report}``.

Exit codes: 0 success, 2 usage error, 3 input validation error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from decimal import Decimal, InvalidOperation
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (
    amortization_eval,
    evaluate_maps,
    read_metrics,
    run_gw,
    sweep_clouds,
    write_metrics,
)
from .io import atomic_write_text, csv_text
from .kernels import KernelSpec
from .nnmap import load_model, save_model
from .shapes import (
    CloudFormatError,
    load_cloud,
    sample_circle,
    sample_heart,
    save_cloud,
    transform,
)
from .train import GmmdConfig, KernelPair, TrainingDiverged, fit_kernels, train

log = logging.getLogger("gmmd")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4


class InputError(Exception):
    """Bad files, configs or run directories (exit code 3)."""


class UsageError(Exception):
    """Flag combinations argparse cannot express (exit code 2)."""


# ---------------------------------------------------------------------------
# small helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_cloud(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"missing file: {p}")
    try:
        return load_cloud(p)
    except CloudFormatError as exc:
        raise InputError(str(exc)) from exc


def parse_grid(text: str) -> list:
    """``a,b,c`` or ``start..stop x factor`` (e.g. ``0.001..0.512x2``).

    Geometric grids are computed in decimal so ``5..0.0005x0.1`` yields
    exactly ``5, 0.5, 0.05, 0.005, 0.0005``.
    """
    try:
        if ".." not in text:
            return [float(Decimal(t)) for t in text.split(",") if t.strip()]
        start, rest = text.split("..", 1)
        stop, factor = rest.split("x", 1)
        a, b, r = Decimal(start), Decimal(stop), Decimal(factor)
    except (InvalidOperation, ValueError) as exc:
        raise UsageError(f"cannot parse grid {text!r}") from exc
    if a <= 0 or b <= 0 or r <= 0 or r == 1 or (b - a) * (r - 1) < 0:
        raise UsageError(f"grid {text!r} does not reach its end point")
    out, k = [], 0
    while True:
        v = a * r ** k
        if (r > 1 and v > b) or (r < 1 and v < b):
            break
        out.append(float(v))
        k += 1
    return out


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise InputError(f"missing config file: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{p}: config must be a flat JSON object")
    return doc


def build_config(args) -> GmmdConfig:
    doc = load_config(getattr(args, "config", None))
    for key in ("lr", "epochs", "batch_size", "seed", "metric_mode", "mmd_power", "lambda_x", "lambda_y"):
        v = getattr(args, key, None)
        if v is not None:
            doc[key] = v
    lam = getattr(args, "lam", None)
    table = getattr(args, "table_lambda", None)
    if lam is not None:
        doc["lambda_x"] = doc["lambda_y"] = lam
    if table is not None:
        if table <= 0:
            raise UsageError("--table-lambda must be positive")
        doc["lambda_x"] = doc["lambda_y"] = 1.0 / table
    try:
        return GmmdConfig.from_dict(doc)
    except KeyError as exc:
        raise InputError(exc.args[0]) from exc
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid config: {exc}") from exc


def kernels_to_dict(k: KernelPair) -> dict:
    return {"kx": list(k.kx.bandwidths), "ky": list(k.ky.bandwidths)}


def kernels_from_dict(doc: dict) -> KernelPair:
    return KernelPair(KernelSpec(tuple(doc["kx"])), KernelSpec(tuple(doc["ky"])))


def write_manifest(out: Path, args, config: dict, inputs: dict, outputs: list, seconds: float):
    doc = {
        "tool": "gmmd",
        "version": __version__,
        "command": args.command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": config.get("seed"),
        "inputs": {name: {"path": str(Path(p).resolve()), "sha256": sha256(p)} for name, p in inputs.items()},
        "outputs": sorted(outputs),
        "wall_clock_seconds": seconds,
    }
    atomic_write_text(out / "manifest.json", json.dumps(doc, indent=2) + "\n")


def read_manifest(run: Path) -> dict:
    p = run / "manifest.json"
    if not p.is_file():
        raise InputError(f"missing artifact: {p}")
    return json.loads(p.read_text())


def training_clouds(manifest: dict):
    """Reload the run's inputs, checking they are unchanged."""
    clouds = []
    for name in ("x", "y"):
        entry = manifest["inputs"].get(name)
        if entry is None:
            raise InputError(f"manifest lists no input {name!r}")
        path = Path(entry["path"])
        if not path.is_file():
            raise InputError(f"missing artifact: training input {path}")
        if sha256(path) != entry["sha256"]:
            raise InputError(f"training input {path} changed since the run")
        clouds.append(read_cloud(path))
    return clouds


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    if args.shape == "heart":
        cloud = sample_heart(args.n, seed=args.seed, noise_sd=args.noise_sd)
    else:
        cloud = sample_circle(args.n)
    for spec in args.transform or []:
        name, _, value = spec.partition(":")
        try:
            if name == "rotate":
                cloud = transform(cloud, "rotate", angle=float(value or np.pi / 3))
            elif name == "scale":
                cloud = transform(cloud, "scale", factor=float(value or 0.5))
            elif name == "embed3d":
                cloud = transform(cloud, "embed3d", seed=int(value or 0))
            else:
                raise UsageError(f"unknown transform {name!r} (rotate[:rad], scale[:s], embed3d[:seed])")
        except ValueError as exc:
            raise UsageError(f"bad transform {spec!r}: {exc}") from exc
    save_cloud(cloud, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args)
    X, Y = read_cloud(args.x), read_cloud(args.y)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    kernels = fit_kernels(X, Y, cfg)
    f, g, history = train(X, Y, cfg, kernels=kernels)
    seconds = time.perf_counter() - t0
    row = evaluate_maps(f, g, X, Y, kernels, cfg, label="train",
                        seconds=seconds if args.record_time else None)
    save_model(f, out / "f.json")
    save_model(g, out / "g.json")
    atomic_write_text(out / "kernels.json", json.dumps(kernels_to_dict(kernels)) + "\n")
    header = ["epoch", "total", "mmd_x", "mmd_y", "delta_x", "delta_y", "delta_xy"]
    rows = [[e, b.total, b.mmd_x, b.mmd_y, b.delta_x, b.delta_y, b.delta_xy]
            for e, b in enumerate(history.losses)]
    if args.record_time:
        header.append("seconds")
        rows = [r + [s] for r, s in zip(rows, history.seconds)]
    atomic_write_text(out / "history.csv", csv_text(header, rows))
    write_metrics(out / "metrics.csv", [row])
    write_manifest(out, args, cfg.to_dict(), {"x": args.x, "y": args.y},
                   ["f.json", "g.json", "kernels.json", "history.csv", "metrics.csv"], seconds)
    print(f"mmd_x={row.mmd_x:.6g} mmd_y={row.mmd_y:.6g} delta={row.delta:.6g}")
    return EXIT_OK


def cmd_gw(args) -> int:
    cfg = build_config(args)
    if not args.epsilon > 0:
        raise UsageError("--epsilon must be positive")
    X, Y = read_cloud(args.x), read_cloud(args.y)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    kernels = fit_kernels(X, Y, cfg)
    run = run_gw(X, Y, args.epsilon, kernels, cfg, outer_iter=args.outer_iter, tol=args.tol,
                 record_time=args.record_time)
    seconds = time.perf_counter() - t0
    outputs = ["fx.csv", "gy.csv", "metrics.csv", "kernels.json"]
    save_cloud(run.FX, out / "fx.csv")
    save_cloud(run.GY, out / "gy.csv")
    atomic_write_text(out / "kernels.json", json.dumps(kernels_to_dict(kernels)) + "\n")
    if args.export_coupling:
        pi = run.result.coupling.pi
        header = [f"y{j}" for j in range(pi.shape[1])]
        atomic_write_text(out / "coupling.csv", csv_text(header, pi.tolist()))
        outputs.append("coupling.csv")
    write_metrics(out / "metrics.csv", [run.row])
    config = cfg.to_dict()
    config.update(epsilon=args.epsilon, outer_iter=args.outer_iter, tol=args.tol)
    write_manifest(out, args, config, {"x": args.x, "y": args.y}, outputs, seconds)
    if not run.result.converged:
        log.warning("GW did not reach tol %.3g within %d outer iterations", args.tol, args.outer_iter)
    print(f"gw={run.row.objective:.6g} mmd_x={run.row.mmd_x:.6g} mmd_y={run.row.mmd_y:.6g} "
          f"delta={run.row.delta:.6g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run = Path(args.run)
    manifest = read_manifest(run)
    for name in ("f.json", "g.json", "kernels.json", "metrics.csv"):
        if not (run / name).is_file():
            raise InputError(f"missing artifact: {run / name}")
    cfg = GmmdConfig.from_dict(manifest["config"])
    f, g = load_model(run / "f.json"), load_model(run / "g.json")
    kernels = kernels_from_dict(json.loads((run / "kernels.json").read_text()))
    fresh_x, fresh_y = read_cloud(args.x), read_cloud(args.y)
    train_x, train_y = training_clouds(manifest)
    try:
        row = amortization_eval(f, g, fresh_x, fresh_y, kernels, cfg, train_x, train_y)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    write_metrics(run / "metrics.csv", [replace(row, label=args.label)], append=True)
    print(f"mmd_x={row.mmd_x:.6g} mmd_y={row.mmd_y:.6g} delta={row.delta:.6g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    if (args.lambdas is None) == (args.epsilons is None):
        raise UsageError("give exactly one of --lambdas or --epsilons")
    method = "gmmd" if args.lambdas is not None else "gw"
    params = parse_grid(args.lambdas if method == "gmmd" else args.epsilons)
    if not params:
        raise UsageError("empty parameter grid")
    if args.x or args.y:
        if not (args.x and args.y):
            raise UsageError("--x and --y go together")
        X, Y = read_cloud(args.x), read_cloud(args.y)
        inputs = {"x": args.x, "y": args.y}
    else:
        from .shapes import heart_pair

        X, Y = heart_pair(args.task, args.n, seed=args.data_seed)
        inputs = {}
    try:
        threads = max(1, int(os.environ.get("GMMD_THREADS", "1")))
    except ValueError as exc:
        raise UsageError("GMMD_THREADS must be an integer") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rows = sweep_clouds(X, Y, params, cfg, method, min(threads, len(params)), args.record_time)
    write_metrics(out / "metrics.csv", [replace(r, label=args.task if not inputs else "") for r in rows])
    config = cfg.to_dict()
    config.update(method=method, params=params, task=args.task, n=args.n, data_seed=args.data_seed)
    write_manifest(out, args, config, inputs, ["metrics.csv"], time.perf_counter() - t0)
    print(f"{len(rows)} rows -> {out / 'metrics.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report: standalone SVG


SVG_W, SVG_H, PAD = 480, 480, 40
COLORS = ("#1f77b4", "#ff7f0e")


def _frame(points_list):
    allp = np.vstack(points_list)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    return lo, span


def scatter_svg(title: str, series) -> str:
    """``series`` is ``[(name, points)]``; only the first two coordinates are drawn."""
    pts = [np.asarray(p, dtype=np.float64)[:, :2] for _, p in series]
    lo, span = _frame(pts)
    s = max(span)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" '
           f'viewBox="0 0 {SVG_W} {SVG_H}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{title}</text>']
    inner = SVG_W - 2 * PAD
    for k, ((name, _), P) in enumerate(zip(series, pts)):
        color = COLORS[k % len(COLORS)]
        out.append(f'<text x="{SVG_W - PAD - 140}" y="{24 + 16 * k}" font-family="sans-serif" '
                   f'font-size="12" fill="{color}">{name}</text>')
        out.append(f'<g fill="{color}" fill-opacity="0.6">')
        for x, y in P:
            cx = PAD + (x - lo[0]) / s * inner
            cy = SVG_H - PAD - (y - lo[1]) / s * inner
            out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="1.5"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def curve_svg(title: str, ys) -> str:
    ys = np.asarray(ys, dtype=np.float64)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H // 2}" '
           f'viewBox="0 0 {SVG_W} {SVG_H // 2}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{title}</text>']
    if len(ys):
        lo, hi = float(ys.min()), float(ys.max())
        span = hi - lo if hi > lo else 1.0
        h = SVG_H // 2 - 2 * PAD
        xs = np.linspace(0, SVG_W - 2 * PAD, len(ys)) if len(ys) > 1 else np.zeros(1)
        pts = " ".join(f"{PAD + x:.2f},{PAD + h - (y - lo) / span * h:.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{COLORS[0]}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{PAD}" y="{SVG_H // 2 - 10}" font-family="sans-serif" font-size="11">'
                   f'min {lo:.4g}  max {hi:.4g}  epochs {len(ys)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _series_csv(series) -> str:
    rows = []
    for name, P in series:
        for p in np.asarray(P):
            rows.append([name, *(float(v) for v in p)])
    dim = max(np.asarray(P).shape[1] for _, P in series)
    return csv_text(["series", *(f"x{i}" for i in range(dim))], rows)


def cmd_report(args) -> int:
    run = Path(args.run)
    manifest = read_manifest(run)
    X, Y = training_clouds(manifest)
    if (run / "f.json").is_file() and (run / "g.json").is_file():
        FX, GY = load_model(run / "f.json")(X), load_model(run / "g.json")(Y)
    elif (run / "fx.csv").is_file() and (run / "gy.csv").is_file():
        FX, GY = read_cloud(run / "fx.csv"), read_cloud(run / "gy.csv")
    else:
        raise InputError(f"missing artifact: {run} has neither f.json/g.json nor fx.csv/gy.csv")
    figures = {
        "overlay_x": ("X vs g(Y)", [("X", X), ("g(Y)", GY)]),
        "overlay_y": ("Y vs f(X)", [("Y", Y), ("f(X)", FX)]),
    }
    written = []
    for stem, (title, series) in figures.items():
        atomic_write_text(run / f"{stem}.svg", scatter_svg(title, series))
        atomic_write_text(run / f"{stem}.csv", _series_csv(series))
        written += [f"{stem}.svg", f"{stem}.csv"]
    hist = run / "history.csv"
    if hist.is_file():
        rows = read_metrics(hist)
        totals = [float(r["total"]) for r in rows]
        atomic_write_text(run / "loss.svg", curve_svg("training loss per epoch", totals))
        atomic_write_text(run / "loss.csv", csv_text(["epoch", "total"], list(enumerate(totals))))
        written += ["loss.svg", "loss.csv"]
    print("\n".join(str(run / w) for w in written))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _config_flags(p, lambdas=True):
    p.add_argument("--config", help="flat JSON config; unknown keys are rejected")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--metric-mode", dest="metric_mode", choices=("kernel_induced", "euclidean"))
    p.add_argument("--mmd-power", dest="mmd_power", type=int, choices=(1, 2))
    if lambdas:
        grp = p.add_mutually_exclusive_group()
        grp.add_argument("--lambda", dest="lam", type=float, help="set lambda_x = lambda_y")
        grp.add_argument("--table-lambda", dest="table_lambda", type=float,
                         help="set lambda_x = lambda_y = 1 / value")
        p.add_argument("--lambda-x", dest="lambda_x", type=float)
        p.add_argument("--lambda-y", dest="lambda_y", type=float)
    p.add_argument("--record-time", action="store_true",
                   help="fill the seconds column (makes outputs run-dependent)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gmmd", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"gmmd {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic point cloud")
    p.add_argument("--shape", choices=("heart", "circle"), default="heart")
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sd", dest="noise_sd", type=float, default=0.0)
    p.add_argument("--transform", action="append", help="rotate[:rad] | scale[:s] | embed3d[:seed]")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit the pair of maps")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--out", required=True)
    _config_flags(p)

    p = sub.add_parser("gw", help="entropic GW baseline with barycentric maps")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=5e-4)
    p.add_argument("--outer-iter", dest="outer_iter", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--export-coupling", dest="export_coupling", action="store_true")
    _config_flags(p, lambdas=False)

    p = sub.add_parser("eval", help="score a trained run on fresh clouds")
    p.add_argument("--run", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--label", default="amortization")

    p = sub.add_parser("sweep", help="lambda or epsilon grid on a fixture")
    p.add_argument("--task", choices=("rotate", "scale", "embed3d"), default="rotate")
    p.add_argument("--lambdas", help="e.g. 0.001..0.512x2 or 0.01,0.1")
    p.add_argument("--epsilons", help="e.g. 5..0.0005x0.1")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--data-seed", dest="data_seed", type=int, default=0)
    p.add_argument("--x")
    p.add_argument("--y")
    p.add_argument("--out", required=True)
    _config_flags(p, lambdas=False)

    p = sub.add_parser("report", help="SVG figures plus the CSV behind each")
    p.add_argument("--run", required=True)
    return ap


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "gw": cmd_gw,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gmmd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"gmmd: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"gmmd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"gmmd: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
