"""Optimisation and persistence: Adam, step-drop schedules, fit loop, checkpoints.

Weight decay is decoupled (applied directly to the parameter, not through
the gradient) and only ever touches deterministic weight matrices --
decaying a posterior's rho would silently reshape its spread. Checkpoints
are a small binary format: magic "VDTC", u32 version, u32 tensor count,
then per tensor a u16 name length, UTF-8 name, u8 rank, u64 dims and
row-major float64 little-endian data, closed by a CRC32 of everything
before it. All integers are little-endian.
"""

from __future__ import annotations

import os
import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .numkit import RngStream

CHECKPOINT_MAGIC = b"VDTC"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Base for checkpoint load failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class CorruptPayloadError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


@dataclass
class TrainConfig:
    """Settings for one fit: loop sizes, learning-rate plan, seeded noise."""

    epochs: int
    batch_size: int
    lr: float
    lr_schedule: tuple = ()  # ((epoch, multiplier), ...)
    seed: int = 0
    beta: float = 1e-4  # KL weight
    clip_norm: float | None = None
    weight_decay: float = 0.0
    lam: float = 1.0  # physics-residual weight, for physics-informed models

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def lr_at(self, epoch: int) -> float:
        """Base lr times every scheduled multiplier whose epoch has been reached."""
        lr = self.lr
        for at, mult in self.lr_schedule:
            if epoch >= at:
                lr *= mult
        return lr


@dataclass
class AdamState:
    """Moment accumulators for one named parameter set."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(state: AdamState, params, grads, lr: float | None = None):
    """One bias-corrected Adam update; decay only hits entries flagged for it.

    ``params`` is a list of (name, Var, decay_flag); ``grads`` maps names to
    arrays of the same shape. Values are updated in place.
    """
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, var, decayed in params:
        g = grads[name]
        if g.shape != var.value.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape "
                             f"{var.value.shape} for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(var.value)
            state.v[name] = np.zeros_like(var.value)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        if decayed and state.weight_decay:
            var.value *= 1.0 - lr * state.weight_decay
        var.value -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class FitResult:
    loss_trace: list
    wall_s: float


def fit(model, data, config: TrainConfig, adam: AdamState | None = None) -> FitResult:
    """Epoch/batch training loop, fully determined by (seed, config, data).

    The model supplies ``batch_loss(data, idx, stream, config)`` and
    ``params()``; ``data`` only needs a length (``(X, y)`` tuples use the
    target's length). Per-epoch shuffles and per-batch noise come from
    substreams derived off the config seed.
    """
    n = len(data[1]) if isinstance(data, tuple) else len(data)
    if n == 0:
        raise ValueError("empty dataset")
    params = model.params()
    if adam is None:
        adam = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    root = RngStream(config.seed)
    trace = []
    start = time.perf_counter()
    for epoch in range(config.epochs):
        ep_stream = root.derive(epoch)
        order = ep_stream.generator().permutation(n)
        lr = config.lr_at(epoch)
        losses = []
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            loss = model.batch_loss(data, idx, ep_stream.derive(b + 1), config)
            for _, var, _ in params:
                var.grad = None
            loss.backward()
            grads = {name: (var.grad if var.grad is not None else np.zeros_like(var.value))
                     for name, var, _ in params}
            if config.clip_norm is not None:
                clip_gradients(grads, config.clip_norm)
            adam_step(adam, params, grads, lr=lr)
            losses.append(loss.item())
        trace.append(float(np.mean(losses)))
    for _, var, _ in params:
        var.grad = None
    return FitResult(trace, time.perf_counter() - start)


# -- checkpoints ----------------------------------------------------------------


@dataclass
class Checkpoint:
    """In-memory image of a checkpoint file."""

    tensors: dict  # name -> float64 ndarray
    version: int = CHECKPOINT_VERSION

    def require(self, name: str) -> np.ndarray:
        if name not in self.tensors:
            raise ShapeMismatchError(f"checkpoint has no tensor named {name!r}")
        return self.tensors[name]


def _encode_tensors(tensors: dict) -> bytes:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8", order="C")  # asarray keeps 0-d rank intact
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.tobytes())
    payload = b"".join(chunks)
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def _decode_tensors(blob: bytes) -> dict:
    if len(blob) < 12 + 4:
        raise TruncatedFileError("file too short for header and checksum")
    if blob[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError("bad magic bytes")
    payload, (stored_crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise CorruptPayloadError("payload checksum mismatch")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    tensors = {}
    off = 12
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}Q", blob, off) if rank else ()
            off += 8 * rank
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            raw = blob[off : off + 8 * size]
            if len(raw) != 8 * size:
                raise TruncatedFileError("tensor data ends early")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
            off += 8 * size
    except struct.error as exc:
        raise TruncatedFileError(f"tensor table ends early: {exc}") from exc
    return tensors


def save_checkpoint(model, path, adam: AdamState | None = None,
                    rng: RngStream | None = None) -> None:
    """Write every model parameter (and optionally optimiser/rng state) to path."""
    tensors = {name: var.value for name, var, _ in model.params()}
    if adam is not None:
        tensors["opt/step"] = np.array(float(adam.step))
        for name, m in adam.m.items():
            tensors[f"opt/m/{name}"] = m
            tensors[f"opt/v/{name}"] = adam.v[name]
    if rng is not None:
        tensors["rng/state"] = np.array(
            [rng.seed >> 32, rng.seed & 0xFFFFFFFF, rng.stream_id >> 32, rng.stream_id & 0xFFFFFFFF],
            dtype=np.float64,
        )
    blob = _encode_tensors(tensors)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    return Checkpoint(_decode_tensors(blob))


def apply_checkpoint(model, ckpt: Checkpoint) -> None:
    """Copy checkpoint tensors into the model, verifying every shape."""
    for name, var, _ in model.params():
        arr = ckpt.require(name)
        if arr.shape != var.value.shape:
            raise ShapeMismatchError(
                f"shape mismatch for {name}: checkpoint {arr.shape}, model {var.value.shape}"
            )
        var.value[...] = arr


def restore_adam(ckpt: Checkpoint, lr: float, weight_decay: float = 0.0) -> AdamState | None:
    """Rebuild optimiser state if the checkpoint carries it."""
    if "opt/step" not in ckpt.tensors:
        return None
    adam = AdamState(lr=lr, weight_decay=weight_decay,
                     step=int(ckpt.tensors["opt/step"].ravel()[0]))
    for name, arr in ckpt.tensors.items():
        if name.startswith("opt/m/"):
            adam.m[name[len("opt/m/") :]] = arr.copy()
        elif name.startswith("opt/v/"):
            adam.v[name[len("opt/v/") :]] = arr.copy()
    return adam
