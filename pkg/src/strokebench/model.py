"""Model assembly, the training loop with validation-based snapshot selection,
classification/detection inference and checkpoint I/O.

Checkpoint layout (bit-exact): magic ``STKB1\\n``; one UTF-8 header line
``arch layers=<n> input=<C>x<T>x<H>x<W>``; one UTF-8 descriptor line per
layer; then for each parameter in declaration order: name length (u32 LE),
name bytes, rank (u32), extents (u32 each), raw little-endian float32 values.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .annotations import NONSTROKE_LABEL, STROKE_LABEL, Segment, generate_window_proposals
from .errors import ArchitectureError, CheckpointError, ShapeError, TrainingError
from .frames import VideoSource, clamped_start, extract_cuboid
from .nn import ops
from .nn.layers import (LayerSpec, chain_shapes, default_architecture, fan_in,
                        from_descriptor, param_entries, to_descriptor)
from .nn.optim import NesterovSGD
from .nn.rng import SplitMix64, derive_seed

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"STKB1\n"

DETECTION_LABELS = [NONSTROKE_LABEL, STROKE_LABEL]
STROKE_CLASS = DETECTION_LABELS.index(STROKE_LABEL)

_INIT_SALT = 0x494E4954  # distinct streams per purpose
_SHUFFLE_SALT = 0x53485546


@dataclass
class ModelParams:
    specs: list[LayerSpec]
    params: dict[str, np.ndarray]
    input_shape: tuple[int, int, int, int]
    n_classes: int

    def copy(self) -> "ModelParams":
        return replace(self, params={k: v.copy() for k, v in self.params.items()})


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 10
    lr: float = 1e-4
    momentum: float = 0.5
    weight_decay: float = 0.005
    seed: int = 0
    cuboid_len: int = 98
    cuboid_size: int = 120
    deterministic: bool = True  # training is strictly serial either way

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainingError(
                f"epochs and batch_size must be >= 1, got {self.epochs}/{self.batch_size}"
            )


@dataclass(frozen=True)
class DatasetItem:
    """One training/eval sample: a labeled segment of a video."""

    video_id: str
    segment: Segment
    class_index: int


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float


def build_model(n_classes: int, arch: list[LayerSpec] | None = None, seed: int = 0,
                input_shape: tuple[int, int, int, int] = (3, 98, 120, 120)) -> ModelParams:
    """Validate the shape chain and initialize parameters.

    Weights and biases are uniform in ±1/sqrt(fan_in), drawn per layer in
    declaration order from one seeded stream, so a fixed seed gives
    byte-identical parameters.
    """
    if n_classes < 2:
        raise ArchitectureError(f"need at least 2 classes, got {n_classes}")
    if arch is None:
        arch = default_architecture(input_shape, n_classes=n_classes)
    shapes = chain_shapes(arch, input_shape)
    if shapes[-1] != (n_classes,):
        raise ArchitectureError(
            f"architecture ends at shape {shapes[-1]}, expected ({n_classes},)"
        )

    stream = SplitMix64(derive_seed(seed, _INIT_SALT))
    per_param_spec = [s for s in arch if s.kind in ("conv3d", "linear") for _ in ("w", "b")]
    params: dict[str, np.ndarray] = {}
    for (name, shape), spec in zip(param_entries(arch), per_param_spec):
        bound = 1.0 / np.sqrt(fan_in(spec))
        vals = stream.uniform(int(np.prod(shape)), -bound, bound).astype(np.float32)
        params[name] = vals.reshape(shape)
    return ModelParams(list(arch), params, tuple(input_shape), n_classes)


def _forward_full(model: ModelParams, x: np.ndarray):
    """Forward pass keeping per-layer caches for the backward sweep."""
    caches = []
    cur = x
    n_conv = n_fc = 0
    for spec in model.specs:
        if spec.kind == "conv3d":
            n_conv += 1
            w = model.params[f"conv{n_conv}.weight"]
            b = model.params[f"conv{n_conv}.bias"]
            caches.append((spec, n_conv, cur))
            cur = ops.conv3d_forward(cur, w, b, spec.stride, spec.pad)
        elif spec.kind == "maxpool3d":
            out, winners = ops.maxpool3d(cur, spec.window)
            caches.append((spec, winners, cur.shape))
            cur = out
        elif spec.kind == "relu":
            caches.append((spec, cur))
            cur = ops.relu_forward(cur)
        elif spec.kind == "flatten":
            caches.append((spec, cur.shape))
            cur = cur.reshape(cur.shape[0], -1)
        elif spec.kind == "linear":
            n_fc += 1
            w = model.params[f"fc{n_fc}.weight"]
            b = model.params[f"fc{n_fc}.bias"]
            caches.append((spec, n_fc, cur))
            cur = ops.linear_forward(cur, w, b)
        else:
            raise ArchitectureError(f"unknown layer kind {spec.kind!r}")
    return cur, caches


def _backward_full(model: ModelParams, caches, grad_logits: np.ndarray):
    grads: dict[str, np.ndarray] = {}
    g = grad_logits
    for cache in reversed(caches):
        spec = cache[0]
        if spec.kind == "conv3d":
            _, idx, x = cache
            w = model.params[f"conv{idx}.weight"]
            g, gw, gb = ops.conv3d_backward(x, w, g, spec.stride, spec.pad)
            grads[f"conv{idx}.weight"] = gw
            grads[f"conv{idx}.bias"] = gb
        elif spec.kind == "maxpool3d":
            _, winners, in_shape = cache
            g = ops.maxpool3d_backward(g, winners, in_shape)
        elif spec.kind == "relu":
            g = ops.relu_backward(cache[1], g)
        elif spec.kind == "flatten":
            g = g.reshape(cache[1])
        elif spec.kind == "linear":
            _, idx, x = cache
            w = model.params[f"fc{idx}.weight"]
            g, gw, gb = ops.linear_backward(x, w, g)
            grads[f"fc{idx}.weight"] = gw
            grads[f"fc{idx}.bias"] = gb
    return grads


def forward(model: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Logits for a (N,) + input_shape batch."""
    if batch.ndim != 5 or batch.shape[1:] != model.input_shape:
        raise ShapeError(
            f"batch shape {batch.shape} does not match (N,) + {model.input_shape}"
        )
    return _forward_full(model, batch)[0]


def classify(model: ModelParams, cuboid_values: np.ndarray):
    """(class index, probability vector); argmax ties go to the lowest index."""
    logits = forward(model, cuboid_values[None].astype(np.float32, copy=False))
    probs = ops.softmax(logits)[0]
    return int(np.argmax(probs)), probs


def detect(model: ModelParams, src: VideoSource, proposal_len: int = 150,
           proposal_stride: int = 150) -> list[Segment]:
    """Score window proposals with the 2-class model; each positive window is
    its own detection, no merging of adjacent windows."""
    if model.n_classes != 2:
        raise ShapeError(f"detection needs a 2-class model, got {model.n_classes}")
    _, cuboid_len, cuboid_size, _ = model.input_shape
    if src.frame_count < cuboid_len:
        logger.warning("%s: only %d frames, shorter than the %d-frame model input; "
                       "no detections", src.video_id, src.frame_count, cuboid_len)
        return []
    proposals = generate_window_proposals(src.frame_count, proposal_len, proposal_stride)
    detections = []
    for prop in proposals:
        start = clamped_start(src.frame_count, prop.begin, cuboid_len)
        cub = extract_cuboid(src, start, cuboid_len, cuboid_size)
        cls, probs = classify(model, cub.values)
        if cls == STROKE_CLASS:
            detections.append(Segment(prop.begin, prop.end, STROKE_LABEL,
                                      score=float(probs[STROKE_CLASS])))
    return detections


def _extract_item(item: DatasetItem, sources: dict[str, VideoSource],
                  cfg: TrainConfig) -> np.ndarray | None:
    src = sources.get(item.video_id)
    if src is None:
        logger.warning("no video source for %s; sample skipped", item.video_id)
        return None
    if src.frame_count < cfg.cuboid_len:
        logger.warning("%s: %d frames < cuboid length %d; sample skipped",
                       item.video_id, src.frame_count, cfg.cuboid_len)
        return None
    start = clamped_start(src.frame_count, item.segment.begin, cfg.cuboid_len)
    return extract_cuboid(src, start, cfg.cuboid_len, cfg.cuboid_size).values


def _evaluate(model: ModelParams, samples: list[tuple[np.ndarray, int]],
              batch_size: int) -> float:
    correct = 0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        x = np.stack([c[0] for c in chunk])
        logits = forward(model, x)
        correct += int(np.sum(np.argmax(logits, axis=1) == [c[1] for c in chunk]))
    return correct / len(samples)


def train(model: ModelParams, train_items: list[DatasetItem],
          val_items: list[DatasetItem], sources: dict[str, VideoSource],
          cfg: TrainConfig):
    """SGD over epochs with per-epoch validation; returns (best_model, history).

    Every epoch shuffles with its own (seed, epoch)-derived stream, sums the
    batch losses (the loss itself is batch-summed) and keeps the snapshot with
    the highest validation accuracy, earliest epoch on ties. Samples whose
    video is missing or too short are skipped with a warning; an epoch with
    nothing usable aborts.
    """
    if not train_items or not val_items:
        raise TrainingError("train and validation sets must be non-empty")
    for item in train_items + val_items:
        if not 0 <= item.class_index < model.n_classes:
            raise TrainingError(
                f"class index {item.class_index} outside [0, {model.n_classes})"
            )

    train_samples = []
    skipped = 0
    for item in train_items:
        vals = _extract_item(item, sources, cfg)
        if vals is None:
            skipped += 1
        else:
            train_samples.append((vals, item.class_index))
    val_samples = []
    for item in val_items:
        vals = _extract_item(item, sources, cfg)
        if vals is None:
            skipped += 1
        else:
            val_samples.append((vals, item.class_index))
    if skipped:
        logger.warning("skipped %d unextractable samples", skipped)
    if not train_samples or not val_samples:
        raise TrainingError("no usable samples after extraction; aborting")

    opt = NesterovSGD(model.params, cfg.lr, cfg.momentum, cfg.weight_decay)
    best_params = None
    best_acc = -1.0
    history: list[EpochStats] = []
    n = len(train_samples)
    for epoch in range(1, cfg.epochs + 1):
        order = list(range(n))
        SplitMix64(derive_seed(cfg.seed, _SHUFFLE_SALT, epoch)).shuffle(order)
        epoch_loss = 0.0
        correct = 0
        for i in range(0, n, cfg.batch_size):
            batch = [train_samples[j] for j in order[i : i + cfg.batch_size]]
            x = np.stack([b[0] for b in batch])
            y = np.array([b[1] for b in batch], dtype=np.int64)
            logits, caches = _forward_full(model, x)
            loss, grad_logits = ops.softmax_cross_entropy(logits, y)
            grads = _backward_full(model, caches, grad_logits)
            opt.step(model.params, grads)
            epoch_loss += loss
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
        val_acc = _evaluate(model, val_samples, cfg.batch_size)
        history.append(EpochStats(epoch, epoch_loss, correct / n, val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best_params = {k: v.copy() for k, v in model.params.items()}
    best = replace(model, params=best_params)
    return best, history


def history_csv(history: list[EpochStats]) -> str:
    lines = ["epoch,train_loss,train_acc,val_acc"]
    for h in history:
        lines.append(f"{h.epoch},{h.train_loss!r},{h.train_acc!r},{h.val_acc!r}")
    return "\n".join(lines) + "\n"


def save_checkpoint(model: ModelParams, path) -> None:
    c, t, h, w = model.input_shape
    buf = bytearray(CHECKPOINT_MAGIC)
    buf += f"arch layers={len(model.specs)} input={c}x{t}x{h}x{w}\n".encode("utf-8")
    for spec in model.specs:
        buf += (to_descriptor(spec) + "\n").encode("utf-8")
    for name, arr in model.params.items():
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb)) + nb
        buf += struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def _read_line(data: bytes, pos: int):
    nl = data.find(b"\n", pos)
    if nl < 0:
        raise CheckpointError("truncated checkpoint: unterminated header line")
    return data[pos:nl].decode("utf-8"), nl + 1


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(
            f"{path}: bad magic {data[:6]!r}, expected {CHECKPOINT_MAGIC!r}"
        )
    pos = len(CHECKPOINT_MAGIC)
    header, pos = _read_line(data, pos)
    fields = header.split()
    if len(fields) != 3 or fields[0] != "arch":
        raise CheckpointError(f"{path}: bad header line {header!r}")
    try:
        n_layers = int(fields[1].removeprefix("layers="))
        input_shape = tuple(int(x) for x in fields[2].removeprefix("input=").split("x"))
    except ValueError:
        raise CheckpointError(f"{path}: unparseable header {header!r}") from None
    if len(input_shape) != 4:
        raise CheckpointError(f"{path}: input shape must have 4 extents, got {input_shape}")

    specs = []
    for _ in range(n_layers):
        line, pos = _read_line(data, pos)
        try:
            specs.append(from_descriptor(line))
        except ValueError as e:
            raise CheckpointError(f"{path}: {e}") from None

    params: dict[str, np.ndarray] = {}
    for name, shape in param_entries(specs):
        if pos + 4 > len(data):
            raise CheckpointError(f"{path}: truncated before parameter {name}")
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + name_len > len(data):
            raise CheckpointError(f"{path}: truncated parameter name")
        got_name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        if got_name != name:
            raise CheckpointError(f"{path}: expected parameter {name!r}, found {got_name!r}")
        if pos + 4 > len(data):
            raise CheckpointError(f"{path}: truncated rank of {name}")
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + 4 * rank > len(data):
            raise CheckpointError(f"{path}: truncated extents of {name}")
        extents = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        if extents != shape:
            raise CheckpointError(
                f"{path}: parameter {name} has extents {extents}, expected {shape}"
            )
        count = int(np.prod(shape))
        if pos + 4 * count > len(data):
            raise CheckpointError(f"{path}: truncated values of {name}")
        vals = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
        pos += 4 * count
        params[name] = np.ascontiguousarray(vals.reshape(shape)).astype(np.float32)
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} bytes of trailing data")

    shapes = chain_shapes(specs, input_shape)
    if len(shapes[-1]) != 1:
        raise CheckpointError(f"{path}: architecture does not end in a class vector")
    return ModelParams(specs, params, input_shape, shapes[-1][0])
