"""Parametric maps between spaces: ReLU MLPs (plus identity/affine maps), with
hand-written backpropagation and an Adam optimizer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

FORMAT_NAME = "gmmd-map"
FORMAT_VERSION = 1

KINDS = ("mlp", "identity", "affine")

Grads = List[Tuple[np.ndarray, np.ndarray]]


@dataclass
class MapModel:
    """A map ``R^input_dim -> R^output_dim``.

    ``layers`` holds ``(W, b)`` pairs with ``W`` of shape ``(out, in)``.
    For ``mlp`` every layer but the last is followed by a ReLU; an ``affine``
    model is a single linear layer; ``identity`` has no parameters.
    """

    kind: str
    input_dim: int
    output_dim: int
    layers: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}")
        if self.kind == "identity":
            if self.input_dim != self.output_dim:
                raise ValueError("identity map needs input_dim == output_dim")
            if self.layers:
                raise ValueError("identity map has no parameters")
            return
        if self.kind == "affine" and len(self.layers) != 1:
            raise ValueError("affine map has exactly one layer")
        if not self.layers:
            raise ValueError(f"{self.kind} map needs at least one layer")
        fan_in = self.input_dim
        for i, (W, b) in enumerate(self.layers):
            if W.ndim != 2 or W.shape[1] != fan_in or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: shapes {W.shape}, {b.shape} do not compose")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")
            fan_in = W.shape[0]
        if fan_in != self.output_dim:
            raise ValueError(f"final layer outputs {fan_in} dims, expected {self.output_dim}")

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in self.layers)

    def copy(self) -> "MapModel":
        return MapModel(self.kind, self.input_dim, self.output_dim,
                        [(W.copy(), b.copy()) for W, b in self.layers])

    def __call__(self, batch) -> np.ndarray:
        return map_forward(self, batch)[0]


@dataclass
class ForwardCache:
    inputs: List[np.ndarray]  # input to each layer
    pre: List[np.ndarray]  # pre-activation of each layer


def mlp_init(input_dim: int, hidden_dims: Sequence[int], output_dim: int, seed: int) -> MapModel:
    """He-uniform weights ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    dims = [input_dim, *hidden_dims, output_dim]
    if any(int(d) < 1 for d in dims):
        raise ValueError(f"all layer dimensions must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        layers.append((rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return MapModel("mlp", input_dim, output_dim, layers)


def identity_map(dim: int) -> MapModel:
    return MapModel("identity", dim, dim)


def affine_map(W, b=None) -> MapModel:
    W = np.array(W, dtype=np.float64)
    b = np.zeros(W.shape[0]) if b is None else np.array(b, dtype=np.float64)
    return MapModel("affine", W.shape[1], W.shape[0], [(W, b)])


def map_forward(model: MapModel, batch) -> Tuple[np.ndarray, ForwardCache]:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"expected batch of shape (n, {model.input_dim}), got {x.shape}")
    cache = ForwardCache([], [])
    if model.kind == "identity":
        return x, cache
    last = len(model.layers) - 1
    h = x
    for i, (W, b) in enumerate(model.layers):
        cache.inputs.append(h)
        z = h @ W.T + b
        cache.pre.append(z)
        h = z if (i == last or model.kind == "affine") else np.maximum(z, 0.0)
    return h, cache


def map_backward(model: MapModel, cache: ForwardCache, grad_outputs) -> Grads:
    """Parameter gradients of ``sum_n <grad_outputs_n, outputs_n>``.

    The ReLU derivative at exactly 0 is taken as 0.
    """
    g = np.asarray(grad_outputs, dtype=np.float64)
    if model.kind == "identity":
        return []
    if len(cache.pre) != len(model.layers):
        raise ValueError("cache does not match model")
    if g.shape != cache.pre[-1].shape:
        raise ValueError(f"grad_outputs shape {g.shape} != outputs {cache.pre[-1].shape}")
    grads: Grads = [None] * len(model.layers)  # type: ignore[list-item]
    for i in range(len(model.layers) - 1, -1, -1):
        W, _ = model.layers[i]
        grads[i] = (g.T @ cache.inputs[i], g.sum(axis=0))
        if i > 0:
            g = (g @ W) * (cache.pre[i - 1] > 0.0)
    return grads


def grad_inputs(model: MapModel, cache: ForwardCache, grad_outputs) -> np.ndarray:
    """Gradient with respect to the batch itself."""
    g = np.asarray(grad_outputs, dtype=np.float64)
    if model.kind == "identity":
        return g
    for i in range(len(model.layers) - 1, -1, -1):
        g = g @ model.layers[i][0]
        if i > 0:
            g = g * (cache.pre[i - 1] > 0.0)
    return g


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: List[Tuple[np.ndarray, np.ndarray]]
    v: List[Tuple[np.ndarray, np.ndarray]]
    t: int = 0

    @classmethod
    def zeros_like(cls, model: MapModel) -> "AdamState":
        z = lambda: [(np.zeros_like(W), np.zeros_like(b)) for W, b in model.layers]
        return cls(z(), z(), 0)


class NonFiniteGradient(FloatingPointError):
    pass


def adam_step(state: AdamState, model: MapModel, grads: Grads, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_model, new_state)``."""
    if len(grads) != len(model.layers) or len(state.m) != len(model.layers):
        raise ValueError("gradient/state layout does not match model")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    layers, ms, vs = [], [], []
    for i, ((W, b), (gW, gb), (mW, mb), (vW, vb)) in enumerate(
            zip(model.layers, grads, state.m, state.v)):
        if gW.shape != W.shape or gb.shape != b.shape:
            raise ValueError(f"layer {i}: gradient shape mismatch")
        if not (np.all(np.isfinite(gW)) and np.all(np.isfinite(gb))):
            raise NonFiniteGradient(f"non-finite gradient in layer {i}")
        new = []
        for p, g, m, v in ((W, gW, mW, vW), (b, gb, mb, vb)):
            m = beta1 * m + (1.0 - beta1) * g
            v = beta2 * v + (1.0 - beta2) * (g * g)
            p = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
            new.append((p, m, v))
        layers.append((new[0][0], new[1][0]))
        ms.append((new[0][1], new[1][1]))
        vs.append((new[0][2], new[1][2]))
    return MapModel(model.kind, model.input_dim, model.output_dim, layers), AdamState(ms, vs, t)


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: MapModel) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "layers": [{"weight": W.tolist(), "bias": b.tolist()} for W, b in model.layers],
    }


def model_from_dict(doc: dict) -> MapModel:
    if doc.get("format") != FORMAT_NAME:
        raise ValueError(f"not a {FORMAT_NAME} document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported version {doc.get('version')!r}")
    layers = []
    for i, layer in enumerate(doc.get("layers", [])):
        W = np.array(layer["weight"], dtype=np.float64)
        b = np.array(layer["bias"], dtype=np.float64)
        if W.ndim != 2:
            if W.size == 0:
                W = W.reshape(len(b), 0)
            else:
                raise ValueError(f"layer {i}: weight is not a matrix")
        layers.append((W, b))
    return MapModel(doc["kind"], int(doc["input_dim"]), int(doc["output_dim"]), layers)


def save_model(model: MapModel, path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, json.dumps(model_to_dict(model)))


def load_model(path) -> MapModel:
    return model_from_dict(json.loads(Path(path).read_text()))
