"""Central finite-difference verification of the analytic model gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, backward, init_params

ABS_FLOOR = 1e-8


@dataclass
class GradCheckResult:
    max_rel_err: float
    max_abs_err: float
    # relative error over entries with |grad| >= 1e-6, no absolute floor
    max_rel_err_significant: float
    per_param: dict[str, float]
    n_checked: int


def compare(analytic, numeric, abs_floor: float = ABS_FLOOR):
    """Max relative error and max absolute error between two gradient arrays.

    Entries whose absolute difference is within ``abs_floor`` count as exact,
    which keeps near-zero gradients from dominating the relative error.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    rel = np.where(diff <= abs_floor, 0.0, diff / np.where(scale > 0, scale, 1.0))
    return float(rel.max(initial=0.0)), float(diff.max(initial=0.0))


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated then restored)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def random_problem(d_k: int = 6, n_segments: int = 4, hidden: int = 3,
                   tau_mode: str = "per_symptom", seed: int = 0, bounding: str = "sigmoid3"):
    """Small model with every parameter perturbed away from its init."""
    cfg = ModelConfig(embed_dim=d_k, head_hidden=hidden, dropout_p=0.0, tau_mode=tau_mode,
                      output_bounding=bounding)
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng.standard_normal((8, d_k)), seed)
    for name, t in params.tensors.items():
        t += 0.3 * rng.standard_normal(t.shape)
    if bounding == "clamp":
        params.tensors["b2"] += 1.5
    segments = rng.standard_normal((n_segments, d_k))
    labels = rng.integers(0, 4, 8)
    return params, segments, labels


def check_model(d_k: int = 6, n_segments: int = 4, hidden: int = 3,
                tau_mode: str = "per_symptom", seed: int = 0, h: float = 1e-5,
                bounding: str = "sigmoid3") -> GradCheckResult:
    params, segments, labels = random_problem(d_k, n_segments, hidden, tau_mode, seed, bounding)
    _, grads, _ = backward(params, segments, None, labels)

    def loss():
        return backward(params, segments, None, labels)[0]

    per_param = {}
    worst_rel = worst_abs = worst_sig = 0.0
    count = 0
    for name, t in params.tensors.items():
        num = numeric_grad(loss, t, h)
        rel, ab = compare(grads[name], num)
        worst_rel = max(worst_rel, rel)
        worst_abs = max(worst_abs, ab)
        scale = np.maximum(np.abs(grads[name]), np.abs(num))
        big = scale >= 1e-6
        sig = float((np.abs(grads[name] - num)[big] / scale[big]).max()) if big.any() else 0.0
        per_param[name] = sig
        worst_sig = max(worst_sig, sig)
        count += t.size
    return GradCheckResult(worst_rel, worst_abs, worst_sig, per_param, count)
