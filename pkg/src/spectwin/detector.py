"""CNN inference engine (mini-VGG with non-local blocks), weights format, majority vote, latency bench.

The weights file defines the tensors of a fixed topology:

    [conv-relu-conv-relu-pool-NLB] x2, [conv-relu-pool] x2,
    flatten, dense-relu, dense, sigmoid

Channel widths and the attention inner dimension are read from the tensors
themselves, so trainer and inference cannot drift apart on shapes.
"""

from __future__ import annotations

import math
import struct
import time
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import (
    BatchSizeMismatch,
    FormatVersionMismatch,
    InvalidParams,
    NonFiniteActivation,
    NonFiniteTensor,
    ShapeCompositionError,
    ShapeMismatch,
)
from .iqcore import WINDOW_SIZE

WEIGHTS_MAGIC = b"SPTWNN"
WEIGHTS_VERSION = 1
RING_SIZE = 100
VOTE_THRESHOLD = 0.5
DEFAULT_WIDTHS = (32, 64, 128, 128)
DEFAULT_HIDDEN = 128


class LayerKind(IntEnum):
    CONV1D = 0
    DENSE = 1
    NONLOCAL = 2
    BATCHNORM = 3


@dataclass(frozen=True)
class WeightEntry:
    name: str
    kind: LayerKind
    array: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.array, dtype=np.float32)
        object.__setattr__(self, "array", arr)
        if not np.isfinite(arr).all():
            raise NonFiniteTensor(f"tensor {self.name!r} contains NaN or Inf")


def _layer_template(widths, hidden, length=WINDOW_SIZE):
    """Expected (name, kind) sequence plus a shape validator for each entry."""
    f1, f2, f3, f4 = widths
    seq = []

    def conv(name, c_in, c_out):
        seq.append((f"{name}.w", LayerKind.CONV1D, (3, c_in, c_out)))
        seq.append((f"{name}.b", LayerKind.CONV1D, (c_out,)))

    def nlb(name, c):
        for part in ("theta", "phi", "g"):
            seq.append((f"{name}.{part}.w", LayerKind.NONLOCAL, (c, None)))
            seq.append((f"{name}.{part}.b", LayerKind.NONLOCAL, (None,)))
        seq.append((f"{name}.out.w", LayerKind.NONLOCAL, (None, c)))
        seq.append((f"{name}.out.b", LayerKind.NONLOCAL, (c,)))

    conv("conv1a", 2, f1)
    conv("conv1b", f1, f1)
    nlb("nlb1", f1)
    conv("conv2a", f1, f2)
    conv("conv2b", f2, f2)
    nlb("nlb2", f2)
    conv("conv3", f2, f3)
    conv("conv4", f3, f4)
    flat = (length // 16) * f4
    seq.append(("fc1.w", LayerKind.DENSE, (flat, hidden)))
    seq.append(("fc1.b", LayerKind.DENSE, (hidden,)))
    seq.append(("fc2.w", LayerKind.DENSE, (hidden, 1)))
    seq.append(("fc2.b", LayerKind.DENSE, (1,)))
    return seq


def _infer_architecture(entries):
    """Derive (widths, hidden) from entry shapes before template validation."""
    by_name = {e.name: e for e in entries}
    try:
        f1 = by_name["conv1a.w"].array.shape[2]
        f2 = by_name["conv2a.w"].array.shape[2]
        f3 = by_name["conv3.w"].array.shape[2]
        f4 = by_name["conv4.w"].array.shape[2]
        hidden = by_name["fc1.w"].array.shape[1]
    except (KeyError, IndexError) as exc:
        raise ShapeCompositionError(f"missing or malformed core entries: {exc}") from exc
    return (f1, f2, f3, f4), hidden


@dataclass(frozen=True)
class ModelWeights:
    entries: tuple
    format_version: int = WEIGHTS_VERSION

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        widths, hidden = _infer_architecture(self.entries)
        template = _layer_template(widths, hidden)
        if len(self.entries) != len(template):
            raise ShapeCompositionError(
                f"expected {len(template)} tensors, found {len(self.entries)}"
            )
        params = {}
        inner: dict[str, int] = {}
        for entry, (name, kind, shape) in zip(self.entries, template):
            if entry.name != name or entry.kind != kind:
                raise ShapeCompositionError(
                    f"entry {entry.name!r}/{entry.kind.name} where {name!r}/{kind.name} expected"
                )
            got = entry.array.shape
            if len(got) != len(shape):
                raise ShapeCompositionError(f"{name}: rank {len(got)}, expected {len(shape)}")
            block = name.split(".")[0]
            for axis, want in enumerate(shape):
                if want is None:
                    prev = inner.setdefault(block, got[axis])
                    if got[axis] != prev:
                        raise ShapeCompositionError(
                            f"{name}: attention inner dim {got[axis]} != {prev}"
                        )
                elif got[axis] != want:
                    raise ShapeCompositionError(f"{name}: shape {got}, expected {shape}")
            params[name] = entry.array
        object.__setattr__(self, "_params", params)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "hidden", hidden)

    def tensor(self, name: str) -> np.ndarray:
        return self._params[name]


# --- primitive ops ---------------------------------------------------------


def conv1d(x: np.ndarray, kernel: np.ndarray, bias=None, stride: int = 1, padding="same"):
    """Cross-correlation style 1-D convolution over (L, C) or (B, L, C) inputs."""
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeMismatch(f"conv1d needs (B,L,C) input and (K,C,F) kernel, got {x.shape}, {kernel.shape}")
    k, c_in, f = kernel.shape
    if x.shape[2] != c_in:
        raise ShapeMismatch(f"input channels {x.shape[2]} != kernel channels {c_in}")
    if stride < 1:
        raise ShapeMismatch(f"stride must be >= 1, got {stride}")
    if padding == "same":
        pad_lo, pad_hi = (k - 1) // 2, k // 2
    else:
        pad_lo = pad_hi = int(padding)
    if pad_lo or pad_hi:
        x = np.pad(x, ((0, 0), (pad_lo, pad_hi), (0, 0)))
    if x.shape[1] < k:
        raise ShapeMismatch(f"padded length {x.shape[1]} shorter than kernel {k}")
    windows = np.lib.stride_tricks.sliding_window_view(x, k, axis=1)[:, ::stride]
    b, l_out = windows.shape[:2]
    # windows: (B, L', C, K) flattened in (C, K) order against a matching kernel matrix
    flat = windows.reshape(b * l_out, c_in * k)
    out = flat @ np.ascontiguousarray(kernel.transpose(1, 0, 2)).reshape(c_in * k, f)
    if bias is not None:
        if np.shape(bias) != (f,):
            raise ShapeMismatch(f"bias shape {np.shape(bias)} != ({f},)")
        out = out + bias
    out = out.reshape(b, l_out, f)
    return out[0] if squeeze else out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def maxpool1d(x: np.ndarray, pool: int = 2) -> np.ndarray:
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    b, l, c = x.shape
    l_out = l // pool
    out = x[:, : l_out * pool].reshape(b, l_out, pool, c).max(axis=2)
    return out[0] if squeeze else out


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"dense input {x.shape[-1]} != weight rows {w.shape[0]}")
    return x @ w + b


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class NonLocalParams:
    theta_w: np.ndarray
    theta_b: np.ndarray
    phi_w: np.ndarray
    phi_b: np.ndarray
    g_w: np.ndarray
    g_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    @classmethod
    def from_weights(cls, weights: ModelWeights, prefix: str) -> "NonLocalParams":
        t = weights.tensor
        return cls(
            t(f"{prefix}.theta.w"), t(f"{prefix}.theta.b"),
            t(f"{prefix}.phi.w"), t(f"{prefix}.phi.b"),
            t(f"{prefix}.g.w"), t(f"{prefix}.g.b"),
            t(f"{prefix}.out.w"), t(f"{prefix}.out.b"),
        )


def non_local_block(x: np.ndarray, p: NonLocalParams) -> np.ndarray:
    """Residual self-attention: y = x + softmax(theta phi^T / sqrt(d)) g, projected back."""
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.shape[2] != p.theta_w.shape[0]:
        raise ShapeMismatch(f"NLB channels {x.shape[2]} != {p.theta_w.shape[0]}")
    inner = p.theta_w.shape[1]
    theta = x @ p.theta_w + p.theta_b
    phi = x @ p.phi_w + p.phi_b
    g = x @ p.g_w + p.g_b
    scores = np.matmul(theta, phi.transpose(0, 2, 1)) / math.sqrt(inner)
    attn = _softmax(scores)
    mixed = np.matmul(attn, g)
    out = x + (mixed @ p.out_w + p.out_b)
    return out[0] if squeeze else out


def forward(batch: np.ndarray, weights: ModelWeights) -> np.ndarray:
    """Probabilities in (0, 1) for a (B, 1024, 2) feature batch."""
    x = np.asarray(batch, dtype=np.float32)
    if x.ndim != 3 or x.shape[1] != WINDOW_SIZE or x.shape[2] != 2:
        raise ShapeMismatch(f"expected (B, {WINDOW_SIZE}, 2) input, got {x.shape}")
    t = weights.tensor
    x = relu(conv1d(x, t("conv1a.w"), t("conv1a.b")))
    x = relu(conv1d(x, t("conv1b.w"), t("conv1b.b")))
    x = maxpool1d(x)
    x = non_local_block(x, NonLocalParams.from_weights(weights, "nlb1"))
    x = relu(conv1d(x, t("conv2a.w"), t("conv2a.b")))
    x = relu(conv1d(x, t("conv2b.w"), t("conv2b.b")))
    x = maxpool1d(x)
    x = non_local_block(x, NonLocalParams.from_weights(weights, "nlb2"))
    x = relu(conv1d(x, t("conv3.w"), t("conv3.b")))
    x = maxpool1d(x)
    x = relu(conv1d(x, t("conv4.w"), t("conv4.b")))
    x = maxpool1d(x)
    flat = x.reshape(x.shape[0], -1)
    hidden = relu(dense(flat, t("fc1.w"), t("fc1.b")))
    logits = dense(hidden, t("fc2.w"), t("fc2.b")).astype(np.float64)[:, 0]
    probs = 1.0 / (1.0 + np.exp(-logits))
    if not np.isfinite(probs).all():
        raise NonFiniteActivation("forward pass produced NaN or Inf")
    return probs


# --- weights serialization ---------------------------------------------------


def save_weights(weights: ModelWeights, path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<6sII", WEIGHTS_MAGIC, weights.format_version, len(weights.entries)))
        for entry in weights.entries:
            name = entry.name.encode()
            arr = entry.array.astype("<f4")
            fh.write(struct.pack(f"<H{len(name)}sBB", len(name), name, int(entry.kind), arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as fh:
        blob = fh.read()
    head = struct.calcsize("<6sII")
    if len(blob) < head:
        raise FormatVersionMismatch(f"{path}: file shorter than header")
    magic, version, count = struct.unpack_from("<6sII", blob, 0)
    if magic != WEIGHTS_MAGIC:
        raise FormatVersionMismatch(f"{path}: bad magic {magic!r}")
    if version != WEIGHTS_VERSION:
        raise FormatVersionMismatch(f"{path}: unsupported version {version}")
    offset = head
    entries = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode()
            offset += name_len
            kind, ndim = struct.unpack_from("<BB", blob, offset)
            offset += 2
            dims = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            n_bytes = 4 * int(np.prod(dims)) if ndim else 4
            raw = blob[offset : offset + n_bytes]
            if len(raw) < n_bytes:
                raise ShapeCompositionError(
                    f"{path}: tensor {name!r} truncated ({len(raw)} of {n_bytes} bytes)"
                )
            offset += n_bytes
            arr = np.frombuffer(raw, dtype="<f4").reshape(dims)
            entries.append(WeightEntry(name, LayerKind(kind), arr.copy()))
    except (struct.error, ValueError) as exc:
        raise ShapeCompositionError(f"{path}: malformed entry table: {exc}") from exc
    return ModelWeights(tuple(entries))


def random_weights(widths=DEFAULT_WIDTHS, hidden=DEFAULT_HIDDEN, seed: int = 0,
                   zero_nlb_out: bool = False) -> ModelWeights:
    """He-initialized weights of the committed topology; handy for tests and benchmarks."""
    rng = np.random.default_rng(seed)
    entries = []
    for name, kind, shape in _layer_template(widths, hidden):
        shape = _resolve_shape(name, shape, widths)
        if name.endswith(".b"):
            arr = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[:-1]))
            arr = rng.normal(0.0, math.sqrt(2.0 / fan_in), shape).astype(np.float32)
        if zero_nlb_out and ".out." in name:
            arr = np.zeros(shape, dtype=np.float32)
        entries.append(WeightEntry(name, kind, arr))
    return ModelWeights(tuple(entries))


def _nlb_inner(widths, name):
    c = widths[0] if name.startswith("nlb1") else widths[1]
    return max(c // 2, 1)


def _resolve_shape(name, shape, widths):
    if None not in shape:
        return shape
    inner = _nlb_inner(widths, name)
    return tuple(inner if dim is None else dim for dim in shape)


# --- majority vote -----------------------------------------------------------


@dataclass(frozen=True)
class DetectionVerdict:
    radar_present: bool
    vote_fraction: float
    latency_s: float
    window_index: int


@dataclass
class VoteState:
    """Sliding 100-slot ring of thresholded model outputs."""

    batch_size: int = 10
    ring: deque = field(default_factory=lambda: deque(maxlen=RING_SIZE))
    positives: int = 0
    filled_once: bool = False
    windows_seen: int = 0


def probs_to_bits(probs) -> np.ndarray:
    return (np.asarray(probs, dtype=np.float64) >= VOTE_THRESHOLD).astype(np.uint8)


def vote_step(state: VoteState, batch_bits, latency_s: float = 0.0):
    """Push one batch of bits into the ring; emit a verdict once the ring has filled.

    radar_present requires strictly more than half the ring: 51 of 100.
    """
    bits = np.asarray(batch_bits).astype(np.uint8).ravel()
    if bits.size != state.batch_size:
        raise BatchSizeMismatch(f"got {bits.size} outputs, expected {state.batch_size}")
    for bit in bits:
        if len(state.ring) == RING_SIZE:
            state.positives -= state.ring[0]
        state.ring.append(int(bit))
        state.positives += int(bit)
    state.windows_seen += bits.size
    if len(state.ring) == RING_SIZE:
        state.filled_once = True
    if not state.filled_once:
        return state, None
    verdict = DetectionVerdict(
        radar_present=state.positives > RING_SIZE // 2,
        vote_fraction=state.positives / RING_SIZE,
        latency_s=latency_s,
        window_index=state.windows_seen,
    )
    return state, verdict


def bench_latency(weights: ModelWeights, batch_sizes=(1, 10, 100), trials: int = 10,
                  seed: int = 0) -> dict:
    """Mean/stddev forward wall time per batch size; means must grow with batch size."""
    if trials < 10:
        raise InvalidParams(f"trials must be >= 10, got {trials}")
    rng = np.random.default_rng(seed)
    results = {}
    for size in sorted(batch_sizes):
        batch = rng.standard_normal((size, WINDOW_SIZE, 2)).astype(np.float32)
        forward(batch, weights)  # warmup
        times = []
        for _ in range(trials):
            t0 = time.perf_counter()
            forward(batch, weights)
            times.append(time.perf_counter() - t0)
        times = np.array(times)
        mean = float(times.mean())
        results[size] = {
            "mean_s": mean,
            "std_s": float(times.std()),
            "cv": float(times.std() / mean) if mean else 0.0,
        }
    means = [results[s]["mean_s"] for s in sorted(results)]
    assert all(a <= b for a, b in zip(means, means[1:])), \
        f"latency not monotone in batch size: {means}"
    return results
