"""Symptom-guided cross-attention regressor.

Eight trainable symptom queries attend over a participant's segment
embeddings.  Queries, keys and values are LayerNormed (no projections), the
attention logits are divided by a per-symptom temperature, and each
symptom's attended vector goes through its own two-layer head bounded to
[0, 3].  The total severity is the sum of the eight scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numkern as nk
from .numkern import DimensionError, InvalidInputError

NUM_SYMPTOMS = 8
SYMPTOM_NAMES = (
    "no_interest",
    "depressed",
    "sleep",
    "tired",
    "appetite",
    "failure",
    "concentration",
    "psychomotor",
)
TAU_MODES = ("none", "global", "per_symptom")
BOUNDINGS = ("sigmoid3", "clamp")
TOP_K = 3

# tensors that receive decoupled weight decay
DECAYED = frozenset({"queries", "W1", "W2"})


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 1024
    num_symptoms: int = NUM_SYMPTOMS
    head_hidden: int = 128
    dropout_p: float = 0.1
    tau_mode: str = "per_symptom"
    output_bounding: str = "sigmoid3"

    def __post_init__(self):
        if self.embed_dim < 1 or self.head_hidden < 1:
            raise InvalidInputError("embed_dim and head_hidden must be >= 1")
        if self.num_symptoms != NUM_SYMPTOMS:
            raise InvalidInputError("PHQ-8 has exactly 8 symptoms")
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidInputError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.tau_mode not in TAU_MODES:
            raise InvalidInputError(f"unknown tau_mode {self.tau_mode!r}")
        if self.output_bounding not in BOUNDINGS:
            raise InvalidInputError(f"unknown output_bounding {self.output_bounding!r}")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "num_symptoms": self.num_symptoms,
            "head_hidden": self.head_hidden,
            "dropout_p": self.dropout_p,
            "tau_mode": self.tau_mode,
            "output_bounding": self.output_bounding,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        d, h, s = self.embed_dim, self.head_hidden, self.num_symptoms
        shapes = {"queries": (s, d)}
        for which in ("q", "k", "v"):
            shapes[f"ln_{which}_gain"] = (d,)
            shapes[f"ln_{which}_bias"] = (d,)
        if self.tau_mode == "per_symptom":
            shapes["rho"] = (s,)
        elif self.tau_mode == "global":
            shapes["rho"] = (1,)
        shapes["W1"] = (s, h, d)
        shapes["b1"] = (s, h)
        shapes["W2"] = (s, h)
        shapes["b2"] = (s,)
        return shapes

    def param_count(self) -> int:
        return sum(math.prod(shape) for shape in self.param_shapes().values())


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = self.config.param_shapes()
        if list(self.tensors) != list(shapes):
            raise DimensionError(
                f"parameter names {list(self.tensors)} do not match config {list(shapes)}"
            )
        for name, shape in shapes.items():
            if self.tensors[name].shape != shape:
                raise DimensionError(
                    f"{name}: expected shape {shape}, got {self.tensors[name].shape}"
                )

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def taus(self) -> np.ndarray:
        return temperatures(self)


def init_params(config: ModelConfig, queries, seed: int) -> ModelParams:
    """Fresh parameters: queries copied in, LayerNorm at identity, rho = 0.

    Head weights are uniform in +-sqrt(1/fan_in).  Every random draw happens
    regardless of ``tau_mode`` so runs that differ only in mode share init.
    """
    queries = nk.as_f64(queries)
    s, d, h = config.num_symptoms, config.embed_dim, config.head_hidden
    if queries.shape != (s, d):
        raise DimensionError(f"queries must be {(s, d)}, got {queries.shape}")
    rng = nk.keyed_generator(seed, 0xA11CE)
    w1 = rng.uniform(-math.sqrt(1.0 / d), math.sqrt(1.0 / d), size=(s, h, d))
    w2 = rng.uniform(-math.sqrt(1.0 / h), math.sqrt(1.0 / h), size=(s, h))
    tensors = {"queries": queries.copy()}
    for which in ("q", "k", "v"):
        tensors[f"ln_{which}_gain"] = np.ones(d)
        tensors[f"ln_{which}_bias"] = np.zeros(d)
    if config.tau_mode == "per_symptom":
        tensors["rho"] = np.zeros(s)
    elif config.tau_mode == "global":
        tensors["rho"] = np.zeros(1)
    tensors["W1"] = w1
    tensors["b1"] = np.zeros((s, h))
    tensors["W2"] = w2
    tensors["b2"] = np.zeros(s)
    return ModelParams(config, tensors)


def temperatures(params: ModelParams) -> np.ndarray:
    """Per-symptom tau as a length-8 vector."""
    s = params.config.num_symptoms
    mode = params.config.tau_mode
    if mode == "none":
        return np.ones(s)
    if mode == "global":
        return np.full(s, math.exp(params["rho"][0]))
    return np.exp(params["rho"])


@dataclass(frozen=True)
class DropoutKey:
    """Identifies the dropout stream for one participant in one batch."""

    seed: int
    epoch: int = 0
    batch: int = 0
    item: int = 0

    def generator(self, head: int) -> np.random.Generator:
        return nk.keyed_generator(self.seed, self.epoch, self.batch, self.item, head)


@dataclass
class AttentionMap:
    weights: np.ndarray  # (8, N)
    segment_ids: list[str] = field(default_factory=list)


@dataclass
class ForwardOutput:
    symptom_scores: np.ndarray  # (8,)
    total: float
    attention: AttentionMap


def _check_inputs(config: ModelConfig, segments, mask):
    segments = nk.as_f64(segments)
    if segments.ndim != 2 or segments.shape[0] < 1:
        raise InvalidInputError(f"segments must be a non-empty N x d matrix, got {segments.shape}")
    if segments.shape[1] != config.embed_dim:
        raise DimensionError(
            f"segment dim {segments.shape[1]} does not match embed_dim {config.embed_dim}"
        )
    if mask is None:
        mask = np.ones(segments.shape[0], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (segments.shape[0],):
        raise DimensionError(f"mask shape {mask.shape} vs {segments.shape[0]} segments")
    if not mask.any():
        raise InvalidInputError("every segment is masked")
    return segments, mask


def _sum_scores(y: np.ndarray) -> float:
    total = 0.0
    for v in y:
        total += float(v)
    return total


def _forward(params: ModelParams, segments, mask, training: bool, rng_key: DropoutKey | None):
    cfg = params.config
    segments, mask = _check_inputs(cfg, segments, mask)
    if training and cfg.dropout_p > 0 and rng_key is None:
        raise InvalidInputError("training forward with dropout needs a DropoutKey")
    # masked rows never enter the computation, so padding cannot change any bit
    x = segments[mask]
    d = cfg.embed_dim

    q, c_q = nk.layernorm(params["queries"], params["ln_q_gain"], params["ln_q_bias"])
    k, c_k = nk.layernorm(x, params["ln_k_gain"], params["ln_k_bias"])
    v, c_v = nk.layernorm(x, params["ln_v_gain"], params["ln_v_bias"])
    scale = 1.0 / math.sqrt(d)
    logits = nk.matmul(q, k.T) * scale
    tau = temperatures(params)
    attn, c_sm = nk.softmax_temp(logits, tau)
    ctx = nk.matmul(attn, v)  # (8, d)

    pre = nk.matmul(params["W1"], ctx[:, :, None])[:, :, 0] + params["b1"]
    hid, c_relu = nk.relu(pre)
    drops = []
    h = np.empty_like(hid)
    for s in range(cfg.num_symptoms):
        gen = rng_key.generator(s) if (training and rng_key is not None) else None
        h[s], c_drop = nk.dropout(hid[s], cfg.dropout_p, gen, training)
        drops.append(c_drop)
    z = nk.matmul(params["W2"][:, None, :], h[:, :, None])[:, 0, 0] + params["b2"]
    if cfg.output_bounding == "sigmoid3":
        sig, c_sig = nk.sigmoid(z)
        y = 3.0 * sig
    else:
        c_sig = None
        y = np.clip(z, 0.0, 3.0)

    full = np.zeros((cfg.num_symptoms, segments.shape[0]))
    full[:, mask] = attn
    out = ForwardOutput(
        symptom_scores=y,
        total=_sum_scores(y),
        attention=AttentionMap(full, [str(i) for i in range(segments.shape[0])]),
    )
    cache = dict(
        q=q, k=k, v=v, c_q=c_q, c_k=c_k, c_v=c_v, scale=scale, tau=tau, attn=attn,
        c_sm=c_sm, ctx=ctx, c_relu=c_relu, drops=drops, h=h, z=z, c_sig=c_sig,
    )
    return out, cache


def forward(params: ModelParams, segments, mask=None, training: bool = False,
            rng_key: DropoutKey | None = None) -> ForwardOutput:
    return _forward(params, segments, mask, training, rng_key)[0]


def _check_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (NUM_SYMPTOMS,):
        raise DimensionError(f"expected 8 labels, got shape {labels.shape}")
    if np.any((labels < 0) | (labels > 3)):
        raise InvalidInputError(f"labels must lie in 0..3, got {labels.tolist()}")
    return labels.astype(np.float64)


def backward(params: ModelParams, segments, mask, labels, training: bool = False,
             rng_key: DropoutKey | None = None):
    """Loss and exact gradients for one participant.

    Returns ``(loss, grads, output)``; ``grads`` maps every parameter name to
    an array of the parameter's shape.
    """
    cfg = params.config
    labels = _check_labels(labels)
    out, c = _forward(params, segments, mask, training, rng_key)
    loss, c_mse = nk.mse(out.symptom_scores, labels)

    dy = nk.mse_backward(c_mse)
    if cfg.output_bounding == "sigmoid3":
        dz = nk.sigmoid_backward(c["c_sig"], 3.0 * dy)
    else:
        dz = np.where((c["z"] > 0.0) & (c["z"] < 3.0), dy, 0.0)

    grads: dict[str, np.ndarray] = {}
    grads["b2"] = dz.copy()
    grads["W2"] = dz[:, None] * c["h"]
    dh = dz[:, None] * params["W2"]
    dhid = np.stack([nk.dropout_backward(c["drops"][s], dh[s]) for s in range(cfg.num_symptoms)])
    dpre = nk.relu_backward(c["c_relu"], dhid)
    grads["b1"] = dpre
    grads["W1"] = dpre[:, :, None] * c["ctx"][:, None, :]
    dctx = nk.matmul(np.swapaxes(params["W1"], 1, 2), dpre[:, :, None])[:, :, 0]

    # ctx = attn @ v
    dattn = nk.matmul(dctx, c["v"].T)
    dv = nk.matmul(c["attn"].T, dctx)
    dlogits, dtau = nk.softmax_temp_backward(c["c_sm"], dattn)
    ds = dlogits * c["scale"]
    dq = nk.matmul(ds, c["k"])
    dk = nk.matmul(ds.T, c["q"])

    dqueries, grads["ln_q_gain"], grads["ln_q_bias"] = nk.layernorm_backward(c["c_q"], dq)
    _, grads["ln_k_gain"], grads["ln_k_bias"] = nk.layernorm_backward(c["c_k"], dk)
    _, grads["ln_v_gain"], grads["ln_v_bias"] = nk.layernorm_backward(c["c_v"], dv)
    grads["queries"] = dqueries

    # tau = exp(rho), so d/drho = tau * d/dtau
    drho_each = dtau * c["tau"]
    if cfg.tau_mode == "per_symptom":
        grads["rho"] = drho_each
    elif cfg.tau_mode == "global":
        grads["rho"] = np.array([drho_each.sum()])

    ordered = {name: grads[name] for name in params.tensors}
    return loss, ordered, out


def pad_batch(batch):
    """Pad every participant to the longest N in the batch; padding is masked."""
    n_max = max(nk.as_f64(seg).shape[0] for seg, _, _ in batch)
    padded = []
    for seg, mask, labels in batch:
        seg = nk.as_f64(seg)
        n = seg.shape[0]
        mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        pseg = np.zeros((n_max, seg.shape[1]))
        pseg[:n] = seg
        pmask = np.zeros(n_max, dtype=bool)
        pmask[:n] = mask
        padded.append((pseg, pmask, labels))
    return padded


def batch_forward_backward(params: ModelParams, batch: Sequence, training: bool = False,
                           seed: int = 0, epoch: int = 0, batch_index: int = 0):
    """Mean loss and mean gradients over a batch of ``(segments, mask, labels)``."""
    if not batch:
        raise InvalidInputError("empty batch")
    loss_sum = None
    grad_sum: dict[str, np.ndarray] | None = None
    for item, (seg, mask, labels) in enumerate(pad_batch(batch)):
        key = DropoutKey(seed, epoch, batch_index, item)
        loss, grads, _ = backward(params, seg, mask, labels, training, key)
        if grad_sum is None:
            loss_sum = loss
            grad_sum = {k: g.copy() for k, g in grads.items()}
        else:
            loss_sum += loss
            for k, g in grads.items():
                grad_sum[k] += g
    n = float(len(batch))
    return loss_sum / n, {k: g / n for k, g in grad_sum.items()}


def top_k(row, k: int = TOP_K) -> list[int]:
    """Indices of the k largest weights, ties resolved toward the lower index."""
    order = np.argsort(-np.asarray(row, dtype=np.float64), kind="stable")
    return [int(i) for i in order[:k]]


def export_attention(output: ForwardOutput, participant_id: str,
                     segment_ids: Sequence[str] | None = None, k: int = TOP_K) -> dict:
    w = output.attention.weights
    ids = list(segment_ids) if segment_ids is not None else list(output.attention.segment_ids)
    if len(ids) != w.shape[1]:
        raise DimensionError(f"{len(ids)} segment ids for {w.shape[1]} attention columns")
    return {
        "participant_id": participant_id,
        "symptom_names": list(SYMPTOM_NAMES),
        "segment_ids": ids,
        "weights": w.tolist(),
        "topk": [top_k(row, k) for row in w],
    }


def attention_entropy(row) -> float:
    p = np.asarray(row, dtype=np.float64)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))
