"""Experiment orchestration: training runs, the temperature ablation and attention reports.

Every artifact is written with :func:`dump_json`, which fixes key order and
prints floats with 17 significant digits, so rerunning an experiment with
the same experiment config reproduces its output directory byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as D
from . import metrics
from .model import (
    SYMPTOM_NAMES,
    TAU_MODES,
    ModelConfig,
    attention_entropy,
    export_attention,
    forward,
    init_params,
)
from .numkern import InvalidInputError
from .optim import AdamWConfig, load_checkpoint, save_checkpoint, train


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with stable layout and 17-significant-digit floats."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        inner = (",\n").join(pad + dumps(v, indent, _level + 1) for v in obj)
        return "[\n" + inner + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        inner = (",\n").join(
            pad + json.dumps(str(k)) + ": " + dumps(v, indent, _level + 1) for k, v in obj.items()
        )
        return "{\n" + inner + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dump_json(path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n")


def dump_jsonl(path, rows) -> None:
    Path(path).write_text("".join(dumps(r, indent=0).replace("\n", "") + "\n" for r in rows))


# ---------------------------------------------------------------- experiment config


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one run.

    ``source`` is either ``{"manifest": path, "queries": path}`` or
    ``{"synthetic": {...generate_synthetic kwargs...}}``.
    """

    source: dict = field(default_factory=lambda: {"synthetic": {}})
    model: ModelConfig = field(default_factory=lambda: ModelConfig(embed_dim=64))
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    epochs: int = 20
    batch_size: int = 8
    seed: int = 7
    out_dir: str | None = None

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "model": self.model.to_dict(),
            "optimizer": {
                "lr": self.optimizer.lr,
                "beta1": self.optimizer.beta1,
                "beta2": self.optimizer.beta2,
                "eps": self.optimizer.eps,
                "weight_decay": self.optimizer.weight_decay,
                "clip_norm": self.optimizer.clip_norm,
            },
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {"source", "model", "optimizer", "epochs", "batch_size", "seed", "out_dir"}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown experiment keys: {sorted(unknown)}")
        base = cls()
        model = base.model.to_dict()
        model.update(d.get("model", {}))
        opt = base.to_dict()["optimizer"]
        opt.update(d.get("optimizer", {}))
        return cls(
            source=d.get("source", base.source),
            model=ModelConfig.from_dict(model),
            optimizer=AdamWConfig(**opt),
            epochs=int(d.get("epochs", base.epochs)),
            batch_size=int(d.get("batch_size", base.batch_size)),
            seed=int(d.get("seed", base.seed)),
            out_dir=d.get("out_dir"),
        )


@dataclass
class LoadedSource:
    corpus: D.Corpus
    queries: D.QuerySet
    relevance: dict | None = None


def synthetic_kwargs(options: dict, seed: int) -> dict:
    opts = dict(options)
    opts.setdefault("seed", seed)
    if "n_range" in opts:
        opts["n_range"] = tuple(opts["n_range"])
    return opts


def load_source(spec: ExperimentSpec) -> LoadedSource:
    src = spec.source
    if "synthetic" in src:
        syn = D.generate_synthetic(**synthetic_kwargs(src["synthetic"], spec.seed))
        return LoadedSource(syn.corpus, syn.queries, syn.relevance)
    if "manifest" in src:
        corpus = D.load_corpus(src["manifest"])
        if "queries" in src:
            queries = D.read_query_set(src["queries"])
        else:
            queries = D.pseudo_queries(spec.seed, corpus.d_k)
        relevance = None
        if src.get("relevance"):
            relevance = json.loads(Path(src["relevance"]).read_text())
        return LoadedSource(corpus, queries, relevance)
    raise InvalidInputError("source needs a 'synthetic' or 'manifest' entry")


# ---------------------------------------------------------------- training runs


@dataclass
class RunResult:
    params: object
    best_epoch: int
    dev_rmse: float
    log: list
    test_report: metrics.MetricsReport


def run_training(spec: ExperimentSpec, source: LoadedSource | None = None,
                 frozen=(), write: bool = True) -> RunResult:
    source = source or load_source(spec)
    cfg = spec.model
    if source.corpus.d_k != cfg.embed_dim:
        cfg = replace(cfg, embed_dim=source.corpus.d_k)
    params = init_params(cfg, source.queries.vectors, spec.seed)
    res = train(source.corpus.split("train"), source.corpus.split("dev"), params, spec.seed,
                spec.optimizer, spec.epochs, spec.batch_size, frozen=frozen)
    test = source.corpus.split("test") or source.corpus.split("dev")
    rep = metrics.evaluate(res.best, test)
    if write and spec.out_dir:
        out = Path(spec.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(out / "run.json", spec.to_dict())
        save_checkpoint(out / "checkpoint.bin", res.best, spec.seed, res.best_epoch,
                        res.best_dev_rmse, spec.optimizer)
        dump_jsonl(out / "log.jsonl", res.log)
        dump_json(out / "metrics.json", rep.to_dict())
    return RunResult(res.best, res.best_epoch, res.best_dev_rmse, res.log, rep)


ABLATION_LABELS = {"none": "No tau", "global": "Learnable tau (global)",
                   "per_symptom": "Learnable tau (per symptom)"}


def ablation_table(rows: list[dict]) -> str:
    lines = [f"{'tau setting':<30}{'RMSE':>10}{'MAE':>10}{'CCC':>10}"]
    for r in rows:
        lines.append(f"{ABLATION_LABELS[r['tau_mode']]:<30}{r['rmse']:>10.3f}"
                     f"{r['mae']:>10.3f}{r['ccc']:>10.3f}")
    return "\n".join(lines)


def run_tau_ablation(spec: ExperimentSpec) -> list[dict]:
    """Train one model per tau mode (same data, seed and init); test-split rows."""
    source = load_source(spec)
    rows = []
    for mode in TAU_MODES:
        sub = replace(spec, model=replace(spec.model, tau_mode=mode),
                      out_dir=str(Path(spec.out_dir) / mode) if spec.out_dir else None)
        res = run_training(sub, source)
        rows.append({
            "tau_mode": mode,
            "rmse": res.test_report.total["rmse"],
            "mae": res.test_report.total["mae"],
            "ccc": res.test_report.total["ccc"],
            "best_epoch": res.best_epoch,
            "tau": [float(t) for t in res.log[res.best_epoch - 1]["tau"]],
        })
    if spec.out_dir:
        out = Path(spec.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(out / "run.json", spec.to_dict())
        dump_json(out / "ablation.json", {"split": "test", "rows": rows})
        (out / "ablation.txt").write_text(ablation_table(rows) + "\n")
    return rows


# ---------------------------------------------------------------- attention


def planted_recovery(params, records, relevance) -> float:
    """Share of (participant, symptom) pairs with label > 0 whose top-1 segment is planted."""
    hits = total = 0
    for r in records:
        w = forward(params, r.segments).attention.weights
        for s in range(len(SYMPTOM_NAMES)):
            if r.labels[s] > 0:
                total += 1
                hits += int(np.argmax(w[s])) in set(relevance[r.id][s])
    return hits / total if total else float("nan")


def run_attention_report(params, records, out_dir=None, relevance=None) -> dict:
    """Export one attention JSON per participant plus a summary.

    The summary carries per-symptom mean attention entropy and, when
    ground-truth relevance is known, the planted-recovery rate.
    """
    records = sorted(records, key=lambda r: r.id)
    if not records:
        raise InvalidInputError("no participants to report on")
    out = Path(out_dir) / "attention" if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    entropies = np.zeros((len(records), len(SYMPTOM_NAMES)))
    for i, r in enumerate(records):
        fo = forward(params, r.segments)
        entropies[i] = [attention_entropy(row) for row in fo.attention.weights]
        if out:
            ids = [f"{r.id}/{j:04d}" for j in range(r.segments.shape[0])]
            dump_json(out / f"{r.id}.json", export_attention(fo, r.id, ids))
    summary = {
        "n_participants": len(records),
        "mean_entropy": {name: float(entropies[:, s].mean())
                         for s, name in enumerate(SYMPTOM_NAMES)},
    }
    if relevance is not None:
        summary["planted_recovery"] = planted_recovery(params, records, relevance)
    if out:
        dump_json(out / "summary.json", summary)
    return summary


def attention_report_from_checkpoint(checkpoint, corpus: D.Corpus, out_dir=None,
                                     relevance=None, split: str = "test") -> dict:
    params, _ = load_checkpoint(checkpoint)
    if params.config.embed_dim != corpus.d_k:
        raise D.ValidationError(
            f"checkpoint embed_dim {params.config.embed_dim} does not match corpus d_k {corpus.d_k}"
        )
    return run_attention_report(params, corpus.split(split), out_dir, relevance)
