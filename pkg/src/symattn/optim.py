"""AdamW, global-norm clipping, the training loop and checkpoint files."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .model import DECAYED, ModelConfig, ModelParams, batch_forward_backward, temperatures
from .numkern import DimensionError, InvalidInputError, keyed_generator

CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = b"SGCK"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 1.0


@dataclass
class OptimState:
    hyper: AdamWConfig
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    frozen: frozenset = frozenset()

    @classmethod
    def create(cls, params: ModelParams, hyper: AdamWConfig | None = None,
               frozen=()) -> "OptimState":
        hyper = hyper or AdamWConfig()
        return cls(
            hyper,
            {k: np.zeros_like(t) for k, t in params.tensors.items()},
            {k: np.zeros_like(t) for k, t in params.tensors.items()},
            frozen=frozenset(frozen),
        )


def global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float = 1.0) -> dict[str, np.ndarray]:
    """Scale all gradients jointly so their combined L2 norm is at most ``max_norm``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return {k: g.copy() for k, g in grads.items()}
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def adamw_step(params: ModelParams, grads: dict[str, np.ndarray], state: OptimState) -> ModelParams:
    """One decoupled-weight-decay Adam update, applied in place.

    Decay only touches the query matrix and head weight matrices; frozen
    tensors are skipped entirely.
    """
    h = state.hyper
    state.step += 1
    t = state.step
    bc1 = 1.0 - h.beta1 ** t
    bc2 = 1.0 - h.beta2 ** t
    for name, p in params.tensors.items():
        if name in state.frozen:
            continue
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        update = h.lr * mhat / (np.sqrt(vhat) + h.eps)
        if name in DECAYED and h.weight_decay:
            update = update + h.lr * h.weight_decay * p
        p -= update
    return params


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    best: ModelParams
    best_epoch: int
    best_dev_rmse: float
    log: list[dict] = field(default_factory=list)


def select_best_epoch(dev_rmses) -> int:
    """1-based epoch with the lowest dev RMSE; ties keep the earlier epoch."""
    best, best_epoch = math.inf, 0
    for epoch, r in enumerate(dev_rmses, 1):
        if r < best:
            best, best_epoch = r, epoch
    return best_epoch


def shuffle_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return keyed_generator(seed, 0x5EED, epoch).permutation(n)


def train(train_records, dev_records, params: ModelParams, seed: int,
          hyper: AdamWConfig | None = None, epochs: int = 20, batch_size: int = 8,
          frozen=(), on_epoch=None) -> TrainResult:
    """Fixed-length AdamW training with best-dev-RMSE checkpoint selection.

    ``params`` is updated in place; the returned ``best`` is an independent
    copy taken at the selected epoch.
    """
    if not train_records or not dev_records:
        raise InvalidInputError("train and dev splits must be non-empty")
    hyper = hyper or AdamWConfig()
    train_records = sorted(train_records, key=lambda r: r.id)
    state = OptimState.create(params, hyper, frozen)
    best = None
    best_rmse = math.inf
    best_epoch = 0
    log = []
    for epoch in range(1, epochs + 1):
        order = shuffle_order(seed, epoch, len(train_records))
        loss_sum = 0.0
        for b, start in enumerate(range(0, len(order), batch_size)):
            recs = [train_records[i] for i in order[start:start + batch_size]]
            batch = [(r.segments, None, r.labels) for r in recs]
            loss, grads = batch_forward_backward(params, batch, True, seed, epoch, b)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            for name in frozen:
                grads[name] = np.zeros_like(grads[name])
            try:
                grads = clip_global_norm(grads, hyper.clip_norm)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
            adamw_step(params, grads, state)
            loss_sum += loss * len(recs)
        rep = metrics.evaluate(params, dev_records)
        entry = {
            "epoch": epoch,
            "train_loss": loss_sum / len(train_records),
            "dev_rmse": rep.total["rmse"],
            "dev_mae": rep.total["mae"],
            "dev_ccc": rep.total["ccc"],
            "tau": [float(t) for t in temperatures(params)],
        }
        log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        if rep.total["rmse"] < best_rmse:
            best_rmse, best_epoch, best = rep.total["rmse"], epoch, params.copy()
    return TrainResult(best, best_epoch, best_rmse, log)


# ---------------------------------------------------------------- checkpoints


def _manifest(params: ModelParams):
    entries, offset = [], 0
    for name, t in params.tensors.items():
        rows = int(np.prod(t.shape[:-1])) if t.ndim > 1 else 1
        cols = int(t.shape[-1])
        entries.append([name, rows, cols, offset])
        offset += 8 * rows * cols
    return entries


def encode_checkpoint(params: ModelParams, seed: int, epoch: int, dev_rmse: float,
                      hyper: AdamWConfig | None = None) -> bytes:
    """Length-prefixed JSON header followed by little-endian float64 tensors.

    Layout: ``SGCK`` magic, u32 header length, UTF-8 JSON header, payload.
    """
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "seed": seed,
        "epoch": epoch,
        "dev_rmse": float_repr(dev_rmse),
        "optimizer": asdict(hyper or AdamWConfig()),
        "param_manifest": _manifest(params),
    }
    hbytes = json.dumps(header, separators=(",", ":")).encode()
    payload = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes()
                       for t in params.tensors.values())
    return CHECKPOINT_MAGIC + struct.pack("<I", len(hbytes)) + hbytes + payload


def decode_checkpoint(blob: bytes):
    """Returns ``(params, header)``."""
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack_from("<I", blob, 4)
    header = json.loads(blob[8:8 + hlen])
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    config = ModelConfig.from_dict(header["config"])
    shapes = config.param_shapes()
    data = blob[8 + hlen:]
    tensors = {}
    for name, rows, cols, offset in header["param_manifest"]:
        if name not in shapes:
            raise ValueError(f"checkpoint tensor {name!r} not in config")
        n = rows * cols
        if offset + 8 * n > len(data):
            raise ValueError(f"checkpoint truncated in tensor {name!r}")
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64)
        tensors[name] = arr.reshape(shapes[name])
    return ModelParams(config, tensors), header


def save_checkpoint(path, params: ModelParams, seed: int, epoch: int, dev_rmse: float,
                    hyper: AdamWConfig | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(params, seed, epoch, dev_rmse, hyper))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


def float_repr(x: float):
    """Floats as 17-significant-digit values so JSON output is byte-stable."""
    if x is None or not math.isfinite(x):
        return None if x is None else str(x)
    return float(f"{x:.17g}")
