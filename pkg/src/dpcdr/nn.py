"""Minimal dense-network substrate in float64 numpy.

A network is a stack of dense layers whose first-layer input is the
concatenation of a real-valued block and zero or more embedding lookups.
Parameters are plain ``dict[str, ndarray]`` keyed ``W{l}``, ``b{l}`` and
``E{t}``; weights are stored ``(fan_in, fan_out)`` so ``z = a @ W + b``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

Params = dict  # name -> np.ndarray

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh")


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple
    activations: tuple
    embeddings: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "activations", tuple(self.activations))
        object.__setattr__(self, "embeddings", tuple((int(v), int(d)) for v, d in self.embeddings))
        if len(self.layer_sizes) < 2:
            raise ValueError("a network needs at least one layer")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ValueError("one activation per dense layer required")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if any(s <= 0 for s in self.layer_sizes[1:]):
            raise ValueError("layer sizes must be positive")
        if self.dense_in < 0:
            raise ValueError("embedding widths exceed the first layer's input width")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def dense_in(self) -> int:
        return self.layer_sizes[0] - sum(d for _, d in self.embeddings)

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activations": list(self.activations),
            "embeddings": [list(e) for e in self.embeddings],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(d["layer_sizes"]), tuple(d["activations"]), tuple(tuple(e) for e in d["embeddings"]))


def init_network(spec: NetworkSpec, seed) -> Params:
    """Glorot-uniform weights and embeddings, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params: Params = {}
    for t, (vocab, dim) in enumerate(spec.embeddings):
        lim = np.sqrt(6.0 / (vocab + dim))
        params[f"E{t}"] = rng.uniform(-lim, lim, size=(vocab, dim))
    for l in range(spec.n_layers):
        fan_in, fan_out = spec.layer_sizes[l], spec.layer_sizes[l + 1]
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"W{l}"] = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        params[f"b{l}"] = np.zeros(fan_out)
    return params


def _act(name, z):
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return np.tanh(z)


def _act_grad(name, z, a, g):
    if name == "identity":
        return g
    if name == "relu":
        return g * (z > 0)
    if name == "sigmoid":
        return g * a * (1.0 - a)
    return g * (1.0 - a * a)


@dataclass
class Trace:
    """Activations recorded by :func:`forward`; ``inputs[l]`` feeds layer ``l``."""

    inputs: list
    pre: list
    output: np.ndarray
    ids: np.ndarray | None
    batch: int


def _as_ids(spec, ids, batch):
    if not spec.embeddings:
        return None
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[:, None]
    if ids.shape[1] != len(spec.embeddings):
        raise ValueError("one id column per embedding table required")
    if batch is not None and ids.shape[0] != batch:
        raise ValueError("ids and dense input disagree on batch size")
    for t, (vocab, _) in enumerate(spec.embeddings):
        if ids.size and (ids[:, t].min() < 0 or ids[:, t].max() >= vocab):
            raise IndexError(f"id out of range for embedding table {t}")
    return ids


def forward(spec: NetworkSpec, params: Params, x=None, ids=None) -> Trace:
    if spec.dense_in > 0:
        if x is None:
            raise ValueError("dense input required")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != spec.dense_in:
            raise ValueError(f"expected input width {spec.dense_in}, got {np.shape(x)}")
        batch = x.shape[0]
    else:
        batch = None
    ids = _as_ids(spec, ids, batch)
    if batch is None:
        if ids is None:
            raise ValueError("network has no inputs")
        batch = ids.shape[0]
    blocks = [x] if spec.dense_in > 0 else []
    for t in range(len(spec.embeddings)):
        blocks.append(params[f"E{t}"][ids[:, t]])
    a = blocks[0] if len(blocks) == 1 else np.concatenate(blocks, axis=1)
    inputs, pre = [], []
    for l in range(spec.n_layers):
        inputs.append(a)
        z = a @ params[f"W{l}"] + params[f"b{l}"]
        pre.append(z)
        a = _act(spec.activations[l], z)
    return Trace(inputs, pre, a, ids, batch)


@dataclass
class Grads:
    """Aggregate gradients plus optional per-example factors.

    ``per_example[l] = (A, D)`` holds the layer-``l`` input rows and output
    deltas; example ``e`` owns the rows with ``example_index == e``, and its
    weight gradient is ``sum_k outer(A[k], D[k])`` over those rows. Summing
    over examples reproduces ``tensors[f"W{l}"]`` and ``tensors[f"b{l}"]``.
    """

    tensors: dict
    input_grad: np.ndarray | None = None
    per_example: dict = field(default_factory=dict)
    example_index: np.ndarray | None = None
    n_examples: int = 0
    embedding_rows: dict = field(default_factory=dict)

    def materialize(self, layer: int = 0):
        """Dense per-example ``(weight, bias)`` gradients for one layer."""
        if layer not in self.per_example:
            raise KeyError(f"per-example gradients for layer {layer} were not requested")
        a, d = self.per_example[layer]
        w = np.zeros((self.n_examples, a.shape[1], d.shape[1]))
        b = np.zeros((self.n_examples, d.shape[1]))
        np.add.at(w, self.example_index, a[:, :, None] * d[:, None, :])
        np.add.at(b, self.example_index, d)
        return w, b


def backward(
    spec: NetworkSpec,
    params: Params,
    trace: Trace,
    output_grad,
    per_example_layers: Iterable[int] = (),
    example_index=None,
    want_input_grad: bool = False,
) -> Grads:
    """Reverse-mode gradients of ``sum(output * output_grad)``.

    ``per_example_layers`` lists dense layers whose per-example factors are
    kept (layer 0 is the first layer). ``example_index`` maps trace rows to
    examples and defaults to one example per row.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != trace.output.shape:
        raise ValueError(f"output_grad shape {g.shape} != output shape {trace.output.shape}")
    per_example_layers = set(per_example_layers)
    if example_index is None:
        example_index = np.arange(trace.batch)
    example_index = np.asarray(example_index, dtype=np.int64)
    grads = Grads({})
    if per_example_layers:
        grads.example_index = example_index
        grads.n_examples = int(example_index.max()) + 1 if example_index.size else 0
    for l in reversed(range(spec.n_layers)):
        z, a_in = trace.pre[l], trace.inputs[l]
        a_out = trace.inputs[l + 1] if l + 1 < spec.n_layers else trace.output
        delta = _act_grad(spec.activations[l], z, a_out, g)
        grads.tensors[f"W{l}"] = a_in.T @ delta
        grads.tensors[f"b{l}"] = delta.sum(axis=0)
        if l in per_example_layers:
            grads.per_example[l] = (a_in, delta)
        if l > 0 or want_input_grad or spec.embeddings:
            g = delta @ params[f"W{l}"].T
    col = spec.dense_in
    for t, (vocab, dim) in enumerate(spec.embeddings):
        rows = g[:, col : col + dim]
        table = np.zeros((vocab, dim))
        np.add.at(table, trace.ids[:, t], rows)
        grads.tensors[f"E{t}"] = table
        grads.embedding_rows[t] = rows
        col += dim
    if want_input_grad and spec.dense_in > 0:
        grads.input_grad = g[:, : spec.dense_in]
    # keep the conventional parameter order
    grads.tensors = {k: grads.tensors[k] for k in params if k in grads.tensors}
    return grads


def grad_check(
    params: Params,
    loss_closure: Callable[[Params], tuple],
    eps: float = 1e-5,
    n_coords: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_closure(params) -> (loss, grads_dict)``. At least ``n_coords``
    coordinates are sampled uniformly over all tensors present in the
    analytic gradient (all of them when there are fewer).
    """
    _, analytic = loss_closure(params)
    names = [k for k in params if k in analytic]
    sizes = np.array([params[k].size for k in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=min(n_coords, total), replace=False) if total > n_coords else np.arange(total)
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    worst = 0.0
    for f in np.sort(flat):
        t = int(np.searchsorted(offsets, f, side="right") - 1)
        name, idx = names[t], int(f - offsets[t])
        base = params[name]
        probe = {k: v for k, v in params.items()}
        plus = base.copy()
        plus.flat[idx] += eps
        probe[name] = plus
        lp, _ = loss_closure(probe)
        minus = base.copy()
        minus.flat[idx] -= eps
        probe[name] = minus
        lm, _ = loss_closure(probe)
        num = (lp - lm) / (2 * eps)
        ana = float(np.asarray(analytic[name]).flat[idx])
        rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
        worst = max(worst, rel)
    return worst


@dataclass
class OptState:
    kind: str
    slots: dict = field(default_factory=dict)
    step: int = 0


def rmsprop_step(params: Params, grads: dict, state: OptState | None, lr: float, rho: float = 0.9, eps: float = 1e-8):
    """One RMSprop update; parameters without a gradient are left untouched."""
    state = state or OptState("rmsprop")
    new_params, slots = dict(params), dict(state.slots)
    for k, g in grads.items():
        s = rho * slots.get(k, np.zeros_like(g)) + (1.0 - rho) * g * g
        slots[k] = s
        new_params[k] = params[k] - lr * g / (np.sqrt(s) + eps)
    return new_params, OptState("rmsprop", slots, state.step + 1)


def adam_step(
    params: Params,
    grads: dict,
    state: OptState | None,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Bias-corrected Adam update."""
    state = state or OptState("adam")
    t = state.step + 1
    new_params, slots = dict(params), dict(state.slots)
    for k, g in grads.items():
        m, v = slots.get(k, (np.zeros_like(g), np.zeros_like(g)))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        slots[k] = (m, v)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, OptState("adam", slots, t)


# ---------------------------------------------------------------------------
# snapshot format: b"PPGC", u32 version, then per tensor
#   u32 name length, utf-8 name, u32 rank, u64 dims..., float64 data (row-major)
# all little-endian; tensors are read until end of file.

MAGIC = b"PPGC"
VERSION = 1


def save_snapshot(path, tensors: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_snapshot(path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a PPGC snapshot")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    pos, out = 8, {}
    while pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", data, pos)
        pos += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * count
        out[name] = arr
    return out


def prefixed(prefix: str, params: Params) -> dict:
    return {f"{prefix}.{k}": v for k, v in params.items()}


def unprefixed(prefix: str, tensors: dict) -> Params:
    p = prefix + "."
    return {k[len(p) :]: v for k, v in tensors.items() if k.startswith(p)}


def param_norm(tensors: Sequence) -> float:
    return float(np.sqrt(sum(float(np.sum(t * t)) for t in tensors)))
