"""Synthetic heart-shaped point clouds, their isometric transforms, and CSV I/O."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import atomic_write_text

HEART_SCALE = 1.0 / 17.0


def heart_curve(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    x = 16.0 * np.sin(t) ** 3
    y = 13.0 * np.cos(t) - 5.0 * np.cos(2 * t) - 2.0 * np.cos(3 * t) - np.cos(4 * t)
    return HEART_SCALE * np.stack([x, y], axis=1)


def sample_heart(n: int, seed: int = 0, noise_sd: float = 0.0) -> np.ndarray:
    """``n`` points on the classical sextic heart, scaled to diameter about 2."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = heart_curve(t)
    if noise_sd > 0:
        pts = pts + rng.normal(scale=noise_sd, size=pts.shape)
    return pts


def sample_circle(n: int, radius: float = 1.0) -> np.ndarray:
    t = 2.0 * np.pi * np.arange(n) / n
    return radius * np.stack([np.cos(t), np.sin(t)], axis=1)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _require_2d(cloud) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) cloud, got shape {cloud.shape}")
    return cloud


def rotate(cloud, theta: float) -> np.ndarray:
    return _require_2d(cloud) @ rotation_matrix(theta).T


def scale(cloud, s: float) -> np.ndarray:
    if not s > 0:
        raise ValueError("scale factor must be positive")
    return np.asarray(cloud, dtype=np.float64) * s


def embedding_3d(seed: int):
    """Random ``3x2`` matrix with orthonormal columns and a translation."""
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.normal(size=(3, 2)))
    Q = Q * np.sign(np.diag(R))
    return Q, rng.normal(size=3)


def embed_3d(cloud, seed: int = 0) -> np.ndarray:
    Q, shift = embedding_3d(seed)
    return _require_2d(cloud) @ Q.T + shift


DEFAULT_ANGLE = np.pi / 3
DEFAULT_SCALE = 0.5
TASKS = ("rotate", "scale", "embed3d")


def transform(cloud, task: str, angle: float = DEFAULT_ANGLE, factor: float = DEFAULT_SCALE,
              seed: int = 0) -> np.ndarray:
    """Apply one of the named fixture transforms to the same sample."""
    if task == "rotate":
        return rotate(cloud, angle)
    if task == "scale":
        return scale(cloud, factor)
    if task == "embed3d":
        return embed_3d(cloud, seed)
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


def heart_pair(task: str, n: int, seed: int = 0, **kw):
    """``(P, Q)`` where ``Q`` is the transformed copy of the same heart sample."""
    P = sample_heart(n, seed=seed)
    return P, transform(P, task, **kw)


def diameter(cloud) -> float:
    from scipy.spatial.distance import pdist

    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.shape[0] < 2:
        return 0.0
    if cloud.shape[0] > 2000:
        from scipy.spatial import ConvexHull

        if cloud.shape[1] in (2, 3):
            cloud = cloud[ConvexHull(cloud).vertices]
    return float(pdist(cloud).max())


# ---------------------------------------------------------------------------
# CSV I/O: header x0,x1,...; one point per row


def cloud_to_csv(cloud) -> str:
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2:
        raise ValueError("cloud must be 2-D")
    lines = [",".join(f"x{i}" for i in range(cloud.shape[1]))]
    lines += [",".join(repr(float(v)) for v in row) for row in cloud]
    return "\n".join(lines) + "\n"


def save_cloud(cloud, path) -> None:
    atomic_write_text(path, cloud_to_csv(cloud))


class CloudFormatError(ValueError):
    pass


def load_cloud(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise CloudFormatError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    if header != [f"x{i}" for i in range(len(header))]:
        raise CloudFormatError(f"{path}:1: header must be x0,x1,..., got {lines[0]!r}")
    width = len(header)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != width:
            raise CloudFormatError(f"{path}:{lineno}: expected {width} values, got {len(cells)}")
        try:
            row = [float(c) for c in cells]
        except ValueError:
            raise CloudFormatError(f"{path}:{lineno}: non-numeric cell in {line!r}") from None
        if not all(np.isfinite(row)):
            raise CloudFormatError(f"{path}:{lineno}: non-finite value")
        rows.append(row)
    if not rows:
        raise CloudFormatError(f"{path}: no points")
    return np.array(rows, dtype=np.float64)
