"""Small tanh MLPs with hand-written reverse-mode gradients, Adam and Polyak updates.

Parameters live in one flat float64 vector. For each layer ``k`` mapping
``n_in -> n_out`` the vector holds the weight matrix W_k (``n_out`` rows of
``n_in`` entries, row-major) followed by the bias b_k (``n_out`` entries);
layers follow each other in order. ``weights`` and ``biases`` are views into
that vector, so updating ``flat`` in place updates the network.

Hidden layers use tanh. The output layer is either the identity
(``act="linear"``, critics) or ``scale * tanh`` (``act="tanh"``, actors).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .maze_env import FormatError, parse_header

ACTIVATIONS = ("linear", "tanh")


def n_params(layer_sizes: Sequence[int]) -> int:
    return sum(o * i + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass(eq=False)
class MlpParams:
    layer_sizes: tuple[int, ...]
    flat: np.ndarray
    act: str = "linear"
    scale: float = 1.0
    weights: list[np.ndarray] = field(init=False, repr=False)
    biases: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.act!r}")
        dtype = self.flat.dtype if self.flat.dtype in (np.float32, np.float64) else np.float64
        self.flat = np.ascontiguousarray(self.flat, dtype=dtype)
        if self.flat.shape != (n_params(self.layer_sizes),):
            raise ValueError(f"expected {n_params(self.layer_sizes)} parameters, got {self.flat.shape}")
        self.weights, self.biases = _views(self.flat, self.layer_sizes)

    def copy(self) -> MlpParams:
        return MlpParams(self.layer_sizes, self.flat.copy(), self.act, self.scale)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]


def _views(flat: np.ndarray, sizes: Sequence[int]):
    weights, biases = [], []
    at = 0
    for i, o in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[at:at + o * i].reshape(o, i))
        at += o * i
        biases.append(flat[at:at + o])
        at += o
    return weights, biases


def init_mlp(layer_sizes: Sequence[int], rng: np.random.Generator,
             act: str = "linear", scale: float = 1.0, dtype=np.float64) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    params = MlpParams(layer_sizes, np.zeros(n_params(layer_sizes), dtype=dtype), act, scale)
    for W, b in zip(params.weights, params.biases):
        bound = 1.0 / np.sqrt(W.shape[1])
        W[...] = rng.uniform(-bound, bound, size=W.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return params


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=params.flat.dtype)
    if x.shape[-1] != params.n_in or x.ndim not in (1, 2):
        raise ValueError(f"input of shape {x.shape} does not match {params.n_in} input units")
    return x


def forward_trace(params: MlpParams, x: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer, input first, network output last."""
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W.T
        z += b
        if k < last:
            h = np.tanh(z, out=z)
        elif params.act == "tanh":
            h = np.tanh(z, out=z)
            if params.scale != 1.0:
                h = h * params.scale
        else:
            h = z
        acts.append(h)
    return acts


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Network output for one input vector or a (batch, n_in) array."""
    return forward_trace(params, _check_input(params, x))[-1]


def backward(params: MlpParams, acts: list[np.ndarray], upstream: np.ndarray,
             want_params: bool = True) -> tuple[np.ndarray | None, np.ndarray]:
    """Reverse pass over a ``forward_trace``; returns (flat param grad, input grad).

    The gradient is that of sum(upstream * output), summed over the batch.
    """
    g = np.asarray(upstream, dtype=params.flat.dtype)
    last = len(params.weights) - 1
    if params.act == "tanh":
        # out = scale * tanh(z): d out / dz = scale - out^2 / scale
        out = acts[-1]
        g = g * (params.scale - out * out / params.scale)
    grad = np.empty_like(params.flat) if want_params else None
    gw, gb = _views(grad, params.layer_sizes) if want_params else (None, None)
    batched = g.ndim == 2
    for k in range(last, -1, -1):
        if k < last:
            h = acts[k + 1]
            d = h * h
            np.subtract(1.0, d, out=d)
            g = g * d
        if want_params:
            if batched:
                np.matmul(g.T, acts[k], out=gw[k])
                g.sum(axis=0, out=gb[k])
            else:
                np.outer(g, acts[k], out=gw[k])
                gb[k][...] = g
        g = g @ params.weights[k]
    return grad, g


def gradients(params: MlpParams, x: np.ndarray, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of <upstream, forward(x)> w.r.t. the flat parameters and the input."""
    x = _check_input(params, x)
    upstream = np.asarray(upstream, dtype=params.flat.dtype)
    if upstream.shape[-1] != params.n_out or upstream.shape[:-1] != x.shape[:-1]:
        raise ValueError(f"upstream of shape {upstream.shape} does not match output of {params.n_out}")
    grad, gx = backward(params, forward_trace(params, x), upstream)
    return grad, gx


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 1e-3, **kw) -> AdamState:
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), lr=lr, **kw)


def adam_step(params: MlpParams, grads: np.ndarray, state: AdamState) -> MlpParams:
    """In-place Adam update of ``params`` (descending ``grads``)."""
    if grads.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise ValueError("gradient / moment shapes do not match the parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    sq = grads * grads
    sq *= 1.0 - b2
    state.v += sq
    step_size = state.lr * np.sqrt(1.0 - b2 ** state.t) / (1.0 - b1 ** state.t)
    eps_hat = state.eps * np.sqrt(1.0 - b2 ** state.t)
    denom = np.sqrt(state.v)
    denom += eps_hat
    np.divide(state.m, denom, out=denom)
    denom *= step_size
    params.flat -= denom
    return params


def soft_update(target: MlpParams, source: MlpParams, polyak: float) -> MlpParams:
    """target <- (1 - polyak) * target + polyak * source, in place."""
    if target.layer_sizes != source.layer_sizes:
        raise ValueError("soft_update between networks of different shapes")
    if not 0.0 <= polyak <= 1.0:
        raise ValueError(f"polyak must lie in [0, 1], got {polyak}")
    if polyak == 1.0:
        target.flat[...] = source.flat
    elif polyak > 0.0:
        target.flat *= 1.0 - polyak
        target.flat += polyak * source.flat
    return target


def mlp_to_lines(params: MlpParams) -> list[str]:
    sizes = ",".join(str(n) for n in params.layer_sizes)
    head = f"mlp v1 layers={sizes} act={params.act}"
    if params.flat.dtype == np.float32:
        head += " dtype=float32"
    if params.act == "tanh":
        head += f" scale={format(params.scale, '.17g')}"
    return [head] + [format(float(v), ".17g") for v in params.flat]


def mlp_from_lines(lines: Sequence[str], start: int = 1,
                   path: str | Path | None = None) -> tuple[MlpParams, int]:
    """Parse an ``mlp v1`` section; returns the network and the number of lines consumed.

    ``start`` is the 1-based line number of the header, used in error messages.
    """
    if not lines:
        raise FormatError("missing mlp section", start, path)
    head = parse_header(lines[0], "mlp", start, path)
    try:
        sizes = tuple(int(n) for n in head["layers"].split(","))
    except (KeyError, ValueError):
        raise FormatError(f"bad mlp header {lines[0].strip()!r}", start, path) from None
    count = n_params(sizes)
    if len(lines) < count + 1:
        raise FormatError(f"truncated mlp section: expected {count} values, found {len(lines) - 1}",
                          start + len(lines), path)
    values = np.empty(count, dtype=np.float32 if head.get("dtype") == "float32" else np.float64)
    for i in range(count):
        try:
            values[i] = float(lines[i + 1])
        except ValueError:
            raise FormatError(f"bad parameter value {lines[i + 1]!r}", start + i + 1, path) from None
    params = MlpParams(sizes, values, head.get("act", "linear"), float(head.get("scale", 1.0)))
    return params, count + 1
