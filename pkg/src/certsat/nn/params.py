"""Named parameters, dense/LSTM building blocks, Adam and checkpoints."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor

CHECKPOINT_MAGIC = b"CSATCKPT"
CHECKPOINT_VERSION = 1


class ParameterStore:
    """Flat name -> float64 array map plus module layouts and Adam state."""

    def __init__(self, seed: int = 0):
        self.values: dict[str, np.ndarray] = {}
        self.modules: dict[str, dict] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self.rng = np.random.default_rng(seed)
        self.frozen: set[str] = set()

    # -- registration -------------------------------------------------------
    def add(self, name: str, value) -> None:
        if name in self.values:
            raise KeyError(f"parameter {name!r} already registered")
        self.values[name] = np.array(value, dtype=np.float64)

    def glorot(self, shape: tuple[int, ...]) -> np.ndarray:
        fan_in = shape[0]
        fan_out = shape[1] if len(shape) > 1 else 1
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return self.rng.uniform(-lim, lim, size=shape)

    def add_mlp(self, name: str, dims: list[int], activation: str | None = "relu",
                out_activation: str | None = None, bias: bool = True) -> None:
        """Register ``len(dims) - 1`` affine layers ``name/W{i}`` (and ``name/b{i}``)."""
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.add(f"{name}/W{i}", self.glorot((a, b)))
            if bias:
                self.add(f"{name}/b{i}", np.zeros(b))
        self.modules[name] = {"kind": "mlp", "dims": list(dims), "activation": activation,
                              "out_activation": out_activation, "bias": bias}

    def add_lstm(self, name: str, in_dim: int, hidden: int, layer_norm: bool = False) -> None:
        """LSTM weights; ``layer_norm`` adds per-gate and cell-state gains."""
        self.add(f"{name}/W", self.glorot((in_dim + hidden, 4 * hidden)))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget gate
        self.add(f"{name}/b", b)
        if layer_norm:
            self.add(f"{name}/gain", np.ones(4 * hidden))
            self.add(f"{name}/c_gain", np.ones(hidden))
            self.add(f"{name}/c_bias", np.zeros(hidden))
        self.modules[name] = {"kind": "lstm", "in_dim": in_dim, "hidden": hidden, "layer_norm": layer_norm}

    # -- access ---------------------------------------------------------------
    def __getitem__(self, name: str) -> Tensor:
        """Tensor view of a parameter; a gradient leaf when a tape is active."""
        tape = ad.active_tape()
        if tape is None or name in self.frozen:
            return Tensor(self.values[name])
        leaf = tape.leaves.get(name)
        if leaf is None:
            leaf = Tensor(self.values[name], requires_grad=True)
            tape.leaves[name] = leaf
        return leaf

    def names(self, scope: str = "") -> list[str]:
        return [n for n in self.values if n == scope or n.startswith(scope.rstrip("/") + "/") or not scope]

    def count(self, scope: str = "") -> int:
        return int(sum(self.values[n].size for n in self.names(scope)))

    def zero_like(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(v) for n, v in self.values.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self.values.items()}

    # -- persistence ----------------------------------------------------------
    def save(self, path: str | Path, meta: dict | None = None) -> None:
        save_checkpoint(path, self.values, {"modules": self.modules, **(meta or {})})

    @classmethod
    def load(cls, path: str | Path) -> tuple["ParameterStore", dict]:
        tensors, meta = load_checkpoint(path)
        store = cls()
        store.values = tensors
        store.modules = meta.pop("modules", {})
        return store, meta


def mlp_forward(store: ParameterStore, name: str, x: Tensor) -> Tensor:
    layout = store.modules[name]
    n_layers = len(layout["dims"]) - 1
    if x.shape[-1] != layout["dims"][0]:
        raise ShapeMismatch(f"{name}: input width {x.shape[-1]}, expected {layout['dims'][0]}")
    act = ad.ACTIVATIONS[layout["activation"]]
    out_act = ad.ACTIVATIONS[layout["out_activation"]]
    for i in range(n_layers):
        x = ad.matmul(x, store[f"{name}/W{i}"])
        if layout["bias"]:
            x = ad.add(x, store[f"{name}/b{i}"])
        f = act if i < n_layers - 1 else out_act
        if f is not None:
            x = f(x)
    return x


def lstm_cell_step(store: ParameterStore, name: str, x: Tensor,
                   state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
    """One LSTM step on a batch of rows. Gate order: input, forget, cell, output.

    With layer norm each gate block is standardized before its gain and bias,
    and the cell state is standardized before the output tanh.
    """
    layout = store.modules[name]
    h, c = state
    d = layout["hidden"]
    if x.shape[-1] != layout["in_dim"] or h.shape[-1] != d or h.shape != c.shape:
        raise ShapeMismatch(f"{name}: bad input/state shapes {x.shape}, {h.shape}, {c.shape}")
    z = ad.matmul(ad.concat([x, h], axis=1), store[f"{name}/W"])
    ln = layout.get("layer_norm", False)
    if ln:
        z = ad.mul_row(ad.layer_norm(z, blocks=4), store[f"{name}/gain"])
    z = ad.add(z, store[f"{name}/b"])
    i = ad.sigmoid(ad.cols(z, 0, d))
    f = ad.sigmoid(ad.cols(z, d, 2 * d))
    g = ad.tanh(ad.cols(z, 2 * d, 3 * d))
    o = ad.sigmoid(ad.cols(z, 3 * d, 4 * d))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    c_out = c_new
    if ln:
        c_out = ad.add(ad.mul_row(ad.layer_norm(c_new), store[f"{name}/c_gain"]), store[f"{name}/c_bias"])
    h_new = ad.mul(o, ad.tanh(c_out))
    return h_new, c_new


# -- optimisation -------------------------------------------------------------

def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients by ``max_norm / ||g||`` when the global norm exceeds it."""
    norm = global_norm(grads)
    if norm > max_norm:
        s = max_norm / norm
        grads = {k: g * s for k, g in grads.items()}
    return grads, norm


def lr_schedule(step: int, total: int, lr0: float = 5e-5) -> float:
    """Linear decay from ``lr0`` at step 0 to zero at ``total``."""
    if total <= 0:
        return lr0
    return lr0 * max(0.0, 1.0 - step / total)


def adam_step(store: ParameterStore, grads: dict[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    store.step += 1
    t = store.step
    for name, g in grads.items():
        if name in store.frozen:
            continue
        m = store.m.get(name)
        if m is None:
            m = store.m[name] = np.zeros_like(g)
            store.v[name] = np.zeros_like(g)
        v = store.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        store.values[name] = store.values[name] - lr * mhat / (np.sqrt(vhat) + eps)


# -- checkpoint format ----------------------------------------------------------
# magic | u32 version | u32 meta length | meta JSON | u32 count |
# per tensor: u16 name length | name | u8 ndim | u32 dims... | little-endian f8 payload

def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.array(tensors[name], dtype="<f8", order="C")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    version, meta_len = struct.unpack_from("<II", data, pos)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    meta = json.loads(data[pos:pos + meta_len])
    pos += meta_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    return tensors, meta
