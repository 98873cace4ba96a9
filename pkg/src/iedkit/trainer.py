"""Two-phase training: sub-models with early stopping, then the ensemble head.

Checkpoint file layout (little-endian)::

    b"NNCKPT1\\n"
    u32 metadata length, UTF-8 JSON metadata (model spec, seed, epoch)
    u32 parameter count
    per parameter: u32 name length, name, u32 rank, rank x u32 dims,
                   u8 trainable flag, float64 values
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import Ensemble, Model, NotTrainedError, build_ensemble, build_from_spec
from .neuralcore import RMSprop, no_grad
from .neuralcore import functional as F

__all__ = [
    "TrainError",
    "NonFiniteLossError",
    "EmptyDatasetError",
    "CorruptCheckpointError",
    "VersionMismatchError",
    "TrainConfig",
    "Dataset",
    "EpochRecord",
    "Checkpoint",
    "EarlyStopping",
    "train",
    "train_ensemble",
    "evaluate_loss",
    "save_checkpoint",
    "load_checkpoint",
    "encode_checkpoint",
    "decode_checkpoint",
    "parameter_digest",
    "write_history",
    "format_history",
]

log = logging.getLogger(__name__)

MAGIC = b"NNCKPT1\n"
_MAGIC_STEM = b"NNCKPT"


class TrainError(RuntimeError):
    pass


class NonFiniteLossError(TrainError):
    pass


class EmptyDatasetError(TrainError):
    pass


class CorruptCheckpointError(ValueError):
    pass


class VersionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 3
    min_delta: float = 0.0
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-7
    seed: int = 0
    precision: str = "double"

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must all be >= 1")
        if self.precision not in ("double", "single"):
            raise ValueError(f"precision must be 'double' or 'single', got {self.precision!r}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32


@dataclass
class Dataset:
    x: np.ndarray  # (N, channels, samples)
    y: np.ndarray  # (N,) in {0, 1}

    def __post_init__(self):
        self.x = np.asarray(self.x)
        self.y = np.asarray(self.y, dtype=np.float64)
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} inputs but {len(self.y)} labels")

    def __len__(self):
        return len(self.y)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class Checkpoint:
    model_name: str
    variant: str
    params: dict  # name -> float64 array
    trainable: dict  # name -> bool
    seed: int
    epoch: int
    spec: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Model, seed=0, epoch=-1):
        return cls(
            model_name=model.spec.name,
            variant=model.spec.variant,
            params={n: p.data.astype(np.float64, copy=True) for n, p in model.named_parameters()},
            trainable={n: p.trainable for n, p in model.named_parameters()},
            seed=seed,
            epoch=epoch,
            spec=model.spec.to_dict(),
        )

    def restore(self, dtype=np.float64) -> Model:
        """Rebuild the model this checkpoint was taken from."""
        model = build_from_spec(self.spec, dtype=dtype)
        model.load_state_dict(self.params, self.trainable)
        model.trained = True
        if isinstance(model, Ensemble):
            model.cnn.trained = model.lstm.trained = True
        return model


class EarlyStopping:
    """Track the best validation loss; signal a stop after ``patience`` misses.

    An epoch counts as an improvement only when it beats the best loss by more
    than ``min_delta``.
    """

    def __init__(self, patience=3, min_delta=0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best_loss = math.inf
        self.best_epoch = -1
        self.misses = 0

    def update(self, epoch, val_loss):
        """Return (improved, should_stop) after recording one epoch."""
        if val_loss < self.best_loss - self.min_delta:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.misses = 0
            return True, False
        self.misses += 1
        return False, self.misses >= self.patience


def evaluate_loss(predict, data: Dataset, batch_size=64):
    """Inference-mode BCE over a whole dataset, as one mean over examples."""
    probs = np.empty(len(data))
    with no_grad():
        for start in range(0, len(data), batch_size):
            probs[start:start + batch_size] = predict(data.x[start:start + batch_size]).data
    return float(F.bce_loss(probs, data.y).data)


def _fit(model, forward, params, train_set, val_set, config, snapshot):
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptyDatasetError("training and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    optimizer = RMSprop(params, lr=config.lr, rho=config.rho, eps=config.eps)
    stopper = EarlyStopping(config.patience, config.min_delta)
    history, best = [], None
    x_train = train_set.x.astype(config.dtype, copy=False)
    for epoch in range(config.max_epochs):
        started = time.perf_counter()
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            optimizer.zero_grad()
            loss = F.bce_loss(forward(x_train[idx], training=True, rng=rng), train_set.y[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLossError(
                    f"{model.spec.name}: loss became {value} at epoch {epoch}, "
                    f"batch starting {start}"
                )
            loss.backward()
            optimizer.step()
            losses.append(value)
        val_loss = evaluate_loss(lambda xb: forward(xb.astype(config.dtype, copy=False)),
                                 val_set)
        if not math.isfinite(val_loss):
            raise NonFiniteLossError(f"{model.spec.name}: validation loss is {val_loss}")
        record = EpochRecord(epoch, float(np.mean(losses)), val_loss,
                             time.perf_counter() - started)
        history.append(record)
        log.info("%s epoch %d train %.5f val %.5f", model.spec.name, epoch,
                 record.train_loss, record.val_loss)
        improved, stop = stopper.update(epoch, val_loss)
        if improved:
            best = snapshot(epoch)
        if stop:
            break
    model.load_state_dict(best.params)
    model.trained = True
    return history, best


def train(model: Model, train_set: Dataset, val_set: Dataset, config=TrainConfig()):
    """Fit a sub-model with RMSprop on BCE and validation-loss early stopping.

    The model is left holding the weights of the best epoch, which are also
    returned as a Checkpoint.
    """
    return _fit(
        model, model.forward, model.parameters, train_set, val_set, config,
        lambda epoch: Checkpoint.from_model(model, config.seed, epoch),
    )


def parameter_digest(model: Model) -> str:
    """SHA-256 over parameter names and raw bytes."""
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def train_ensemble(cnn_ckpt, lstm_ckpt, train_set: Dataset, val_set: Dataset,
                   config=TrainConfig(), ensemble_config=None, head_seed=None):
    """Train only the ensemble head over two frozen, checkpointed sub-models.

    Sub-model probabilities are computed once per example and the head is fit
    on those 2-vectors. Returns (history, best checkpoint, ensemble).
    """
    if cnn_ckpt is None or lstm_ckpt is None:
        raise NotTrainedError("both sub-model checkpoints are required")
    cnn = cnn_ckpt.restore(config.dtype)
    lstm = lstm_ckpt.restore(config.dtype)
    seed = config.seed if head_seed is None else head_seed
    ensemble = build_ensemble(cnn, lstm, ensemble_config, seed=seed, dtype=config.dtype)
    frozen_before = (parameter_digest(cnn), parameter_digest(lstm))

    def pairs(data):
        with no_grad():
            z = np.concatenate([
                ensemble.sub_outputs(data.x[s:s + 32].astype(config.dtype, copy=False)).data
                for s in range(0, len(data), 32)
            ])
        return Dataset(z, data.y)

    history, best = _fit(
        ensemble, ensemble.head, ensemble.head_parameters, pairs(train_set), pairs(val_set),
        config, lambda epoch: Checkpoint.from_model(ensemble, config.seed, epoch),
    )
    if (parameter_digest(cnn), parameter_digest(lstm)) != frozen_before:
        raise TrainError("frozen sub-model parameters changed during head training")
    return history, best, ensemble


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = json.dumps({
        "model_name": ckpt.model_name, "variant": ckpt.variant, "seed": ckpt.seed,
        "epoch": ckpt.epoch, "spec": ckpt.spec,
    }, sort_keys=True).encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<I", len(meta)) + meta
    out += struct.pack("<I", len(ckpt.params))
    for name, value in ckpt.params.items():
        value = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape)
        out += struct.pack("<B", int(ckpt.trainable[name]))
        out += value.tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    blob = bytes(blob)
    if not blob.startswith(MAGIC):
        if blob.startswith(_MAGIC_STEM) and len(blob) >= len(MAGIC):
            raise VersionMismatchError(f"unsupported checkpoint version {blob[:8]!r}")
        raise CorruptCheckpointError("missing checkpoint magic")
    if len(blob) < len(MAGIC) + 12:
        raise CorruptCheckpointError("checkpoint is truncated")
    (stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != stored:
        raise CorruptCheckpointError("checksum mismatch; file is truncated or damaged")

    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(blob) - 4:
            raise CorruptCheckpointError("checkpoint entry runs past end of file")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(take(meta_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    params, trainable = {}, {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        (flag,) = struct.unpack("<B", take(1))
        size = int(np.prod(dims, dtype=np.int64))
        params[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
        trainable[name] = bool(flag)
    if pos != len(blob) - 4:
        raise CorruptCheckpointError("trailing bytes after the last entry")
    return Checkpoint(
        model_name=meta["model_name"], variant=meta["variant"], params=params,
        trainable=trainable, seed=meta["seed"], epoch=meta["epoch"], spec=meta["spec"],
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def format_history(history, include_time=True) -> str:
    header = "epoch,train_loss,val_loss,seconds" if include_time else "epoch,train_loss,val_loss"
    lines = [header]
    for r in history:
        row = f"{r.epoch},{r.train_loss!r},{r.val_loss!r}"
        lines.append(row + (f",{r.seconds:.3f}" if include_time else ""))
    return "\n".join(lines) + "\n"


def write_history(history, path, include_time=True) -> None:
    Path(path).write_text(format_history(history, include_time), encoding="utf-8")
