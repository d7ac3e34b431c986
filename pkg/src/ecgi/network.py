"""Adaptive residual network over spacetime coordinates.

The network lifts a normalized (x, y, z, t) input to `width` features with
a tanh layer, passes it through gated residual blocks (two tanh layers
whose output is blended with the block input by alpha = sigmoid(alpha_T))
interleaved with plain tanh layers, and ends with a linear two-channel
head predicting (u, v).

The forward pass is written against the autodiff module's generic ops, so
it accepts plain tape Vars as well as Dual inputs for directional
derivatives.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .mesh import TriMesh
from .ops import TemporalGrid

__all__ = [
    "NetworkConfig", "InputScaling", "NetworkParams", "BoundParams",
    "init_network", "layer_layout", "network_forward",
    "save_checkpoint", "load_checkpoint",
]


@dataclass(frozen=True)
class NetworkConfig:
    width: int = 15
    n_blocks: int = 3
    n_plain_layers: int = 4
    seed: int = 0
    alpha_init: float = 2.0  # sigmoid(2.0) ~ 0.881, skip-dominant start
    head_init_scale: float = 0.5  # shrink head init toward the rest state

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if self.n_blocks < 0 or self.n_plain_layers < 2:
            raise ValueError(
                "need n_blocks >= 0 and n_plain_layers >= 2 (lift + head)")
        sep = max(self.n_blocks - 1, 0)
        if self.n_plain_layers - 2 - sep < 0:
            raise ValueError(
                f"{self.n_plain_layers} plain layers cannot host "
                f"{self.n_blocks} blocks (needs lift, head, and "
                f"{sep} separators)")

    @property
    def total_layers(self):
        return self.n_plain_layers + 2 * self.n_blocks


@dataclass(frozen=True)
class InputScaling:
    """Normalization constants: space to [-1, 1] per axis, time to [0, 1]."""

    center: np.ndarray
    half_extent: np.ndarray
    t0: float
    t1: float

    @classmethod
    def from_domain(cls, mesh: TriMesh, grid: TemporalGrid):
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        half = np.maximum((hi - lo) / 2.0, 1e-12)
        return cls((lo + hi) / 2.0, half, 0.0, grid.duration)

    def normalize(self, points):
        """(4, K) raw (x, y, z, t) -> (4, K) normalized."""
        p = np.asarray(points, dtype=float)
        out = np.empty_like(p)
        out[:3] = (p[:3] - self.center[:, None]) / self.half_extent[:, None]
        out[3] = (p[3] - self.t0) / (self.t1 - self.t0)
        return out

    def jacobian(self):
        """d(normalized)/d(raw) per input row."""
        return np.concatenate([1.0 / self.half_extent,
                               [1.0 / (self.t1 - self.t0)]])


def layer_layout(config: NetworkConfig):
    """Sequence of layer kinds: 'lift', 'block', 'plain', 'head'."""
    kinds = ["lift"]
    for b in range(config.n_blocks):
        kinds.append("block")
        if b < config.n_blocks - 1:
            kinds.append("plain")
    extra = config.n_plain_layers - 2 - max(config.n_blocks - 1, 0)
    kinds.extend(["plain"] * extra)
    kinds.append("head")
    return kinds


@dataclass
class NetworkParams:
    """Weights, biases, and gate parameters, plus the input scaling."""

    config: NetworkConfig
    weights: list          # per layout item: [W] or [W1, W2] for blocks
    biases: list
    alpha_t: np.ndarray    # one per block
    scaling: InputScaling = None

    @property
    def alphas(self):
        return 1.0 / (1.0 + np.exp(-self.alpha_t))

    # -- flat views for the optimizer and finite-difference checks -------
    def flat(self):
        parts = []
        for ws, bs in zip(self.weights, self.biases):
            for w in ws:
                parts.append(w.ravel())
            for b in bs:
                parts.append(b.ravel())
        parts.append(self.alpha_t.ravel())
        return np.concatenate(parts)

    def set_flat(self, vec):
        pos = 0
        for ws, bs in zip(self.weights, self.biases):
            for k, w in enumerate(ws):
                ws[k] = vec[pos:pos + w.size].reshape(w.shape).copy()
                pos += w.size
            for k, b in enumerate(bs):
                bs[k] = vec[pos:pos + b.size].reshape(b.shape).copy()
                pos += b.size
        self.alpha_t = vec[pos:pos + self.alpha_t.size].copy()
        pos += self.alpha_t.size
        assert pos == len(vec)

    def n_params(self):
        return self.flat().size


def _glorot(rng, fan_out, fan_in):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_network(config: NetworkConfig,
                 scaling: InputScaling = None) -> NetworkParams:
    """Glorot-uniform weights, zero biases, configured gate values."""
    rng = np.random.default_rng(config.seed)
    w = config.width
    weights, biases = [], []
    for kind in layer_layout(config):
        if kind == "lift":
            weights.append([_glorot(rng, w, 4)])
            biases.append([np.zeros((w, 1))])
        elif kind == "plain":
            weights.append([_glorot(rng, w, w)])
            biases.append([np.zeros((w, 1))])
        elif kind == "block":
            weights.append([_glorot(rng, w, w), _glorot(rng, w, w)])
            biases.append([np.zeros((w, 1)), np.zeros((w, 1))])
        else:  # head
            # the head starts small so initial (u, v) sit near the rest
            # state, where the excitation-model residuals are well behaved
            weights.append([config.head_init_scale * _glorot(rng, 2, w)])
            biases.append([np.zeros((2, 1))])
    alpha_t = np.full(config.n_blocks, float(config.alpha_init))
    return NetworkParams(config, weights, biases, alpha_t, scaling)


class BoundParams:
    """Network parameters registered as leaves on one tape."""

    def __init__(self, tape: ad.Tape, params: NetworkParams):
        self.tape = tape
        self.params = params
        self.layout = layer_layout(params.config)
        self.weights = [[tape.param(w) for w in ws] for ws in params.weights]
        self.biases = [[tape.param(b) for b in bs] for bs in params.biases]
        self.alpha_t = [tape.param(a) for a in params.alpha_t]

    def leaves(self):
        out = []
        for ws, bs in zip(self.weights, self.biases):
            out.extend(ws)
            out.extend(bs)
        out.extend(self.alpha_t)
        return out

    def flat_grad(self, grads: ad.Gradients):
        parts = []
        for ws, bs in zip(self.weights, self.biases):
            for w in ws:
                parts.append(grads[w].ravel())
            for b in bs:
                parts.append(grads[b].ravel())
        for a in self.alpha_t:
            parts.append(np.atleast_1d(grads[a]).ravel())
        if not self.alpha_t:
            parts.append(np.zeros(0))
        return np.concatenate(parts)


def network_forward(bound: BoundParams, x, alpha_override=None):
    """Evaluate the network on a (4, K) input Var or Dual.

    Returns a 2 x K output (row 0: u-hat, row 1: v-hat).  The optional
    alpha_override replaces every sigmoid gate with a fixed constant; it
    exists for tests that probe the pure-skip limit.
    """
    block_idx = 0
    h = None
    for li, kind in enumerate(bound.layout):
        W = bound.weights[li]
        B = bound.biases[li]
        if kind == "lift":
            h = ad.tanh(ad.affine(W[0], B[0], x))
        elif kind == "plain":
            h = ad.tanh(ad.affine(W[0], B[0], h))
        elif kind == "block":
            h1 = ad.tanh(ad.affine(W[0], B[0], h))
            h2 = ad.tanh(ad.affine(W[1], B[1], h1))
            if alpha_override is None:
                alpha = ad.sigmoid(bound.alpha_t[block_idx])
                one_minus = ad.affc(alpha, -1.0, 1.0)
                h = ad.add(ad.mul(one_minus, h2), ad.mul(alpha, h))
            else:
                c = float(alpha_override)
                h = ad.add(ad.scale(h2, 1.0 - c), ad.scale(h, c))
            block_idx += 1
        else:  # head, linear
            h = ad.affine(W[0], B[0], h)
    return h


# ------------------------------------------------------------- checkpointing

_FORMAT = "ecgi-net-1"


def save_checkpoint(params: NetworkParams, path) -> None:
    """JSON checkpoint; floats serialize at full precision (exact
    round-trip)."""
    cfg = params.config
    payload = {
        "format": _FORMAT,
        "config": {
            "width": cfg.width, "n_blocks": cfg.n_blocks,
            "n_plain_layers": cfg.n_plain_layers, "seed": cfg.seed,
            "alpha_init": cfg.alpha_init,
            "head_init_scale": cfg.head_init_scale,
        },
        "scaling": None if params.scaling is None else {
            "center": params.scaling.center.tolist(),
            "half_extent": params.scaling.half_extent.tolist(),
            "t0": params.scaling.t0, "t1": params.scaling.t1,
        },
        "layers": [
            {"W": [w.tolist() for w in ws], "b": [b.tolist() for b in bs]}
            for ws, bs in zip(params.weights, params.biases)
        ],
        "alpha_t": params.alpha_t.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> NetworkParams:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != _FORMAT:
        raise ValueError(f"{path}: unknown checkpoint format "
                         f"{payload.get('format')!r}")
    cfg = NetworkConfig(**payload["config"])
    scaling = None
    if payload["scaling"] is not None:
        s = payload["scaling"]
        scaling = InputScaling(np.array(s["center"]),
                               np.array(s["half_extent"]),
                               s["t0"], s["t1"])
    weights = [[np.array(w) for w in layer["W"]]
               for layer in payload["layers"]]
    biases = [[np.array(b) for b in layer["b"]]
              for layer in payload["layers"]]
    return NetworkParams(cfg, weights, biases,
                         np.array(payload["alpha_t"]), scaling)
