"""Embedding files, corpus manifests, query sets and the planted synthetic corpus."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import NUM_SYMPTOMS, SYMPTOM_NAMES
from .numkern import InvalidInputError

SGE1_MAGIC = b"SGE1"
HEADER = struct.Struct("<4sII")
SPLITS = ("train", "dev", "test")


class FormatError(ValueError):
    pass


class LengthError(ValueError):
    pass


class ValidationError(ValueError):
    pass


# ---------------------------------------------------------------- SGE1


def encode_embedding(matrix) -> bytes:
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ValueError(f"SGE1 stores 2-D matrices, got shape {m.shape}")
    rows, cols = m.shape
    payload = np.ascontiguousarray(m, dtype="<f4").tobytes()
    return HEADER.pack(SGE1_MAGIC, rows, cols) + payload


def decode_embedding(blob: bytes, widen: bool = True) -> np.ndarray:
    if len(blob) < HEADER.size:
        raise LengthError(f"SGE1 header needs {HEADER.size} bytes, got {len(blob)}")
    magic, rows, cols = HEADER.unpack_from(blob)
    if magic != SGE1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {SGE1_MAGIC!r}")
    expected = HEADER.size + 4 * rows * cols
    if len(blob) != expected:
        raise LengthError(f"SGE1 file should be {expected} bytes, got {len(blob)}")
    m = np.frombuffer(blob, dtype="<f4", offset=HEADER.size).reshape(rows, cols)
    return m.astype(np.float64) if widen else m.astype(np.float32)


def write_embedding_file(path, matrix) -> None:
    Path(path).write_bytes(encode_embedding(matrix))


def read_embedding_file(path, widen: bool = True) -> np.ndarray:
    """Read an SGE1 file; values are widened to float64 unless ``widen=False``."""
    return decode_embedding(Path(path).read_bytes(), widen=widen)


# ---------------------------------------------------------------- records


@dataclass
class ParticipantRecord:
    id: str
    segments: np.ndarray
    labels: list[int]
    split: str

    @property
    def total(self) -> int:
        return int(sum(self.labels))


@dataclass
class Corpus:
    records: list[ParticipantRecord]
    d_k: int

    def split(self, name: str) -> list[ParticipantRecord]:
        return sorted((r for r in self.records if r.split == name), key=lambda r: r.id)

    @property
    def split_sizes(self) -> dict[str, int]:
        return {s: sum(r.split == s for r in self.records) for s in SPLITS}


@dataclass
class QuerySet:
    vectors: np.ndarray
    symptom_names: tuple[str, ...] = SYMPTOM_NAMES

    def __post_init__(self):
        if self.vectors.shape[0] != NUM_SYMPTOMS:
            raise ValidationError(f"query set needs 8 rows, got {self.vectors.shape[0]}")
        if tuple(self.symptom_names) != SYMPTOM_NAMES:
            raise ValidationError(f"symptom names must be {SYMPTOM_NAMES}")


def validate_record(rec: ParticipantRecord, d_k: int | None = None) -> None:
    if len(rec.labels) != NUM_SYMPTOMS:
        raise ValidationError(f"record {rec.id}: expected 8 labels, got {len(rec.labels)}")
    bad = [v for v in rec.labels if not (isinstance(v, (int, np.integer)) and 0 <= v <= 3)]
    if bad:
        raise ValidationError(f"record {rec.id}: labels outside 0..3: {rec.labels}")
    if rec.split not in SPLITS:
        raise ValidationError(f"record {rec.id}: unknown split {rec.split!r}")
    if rec.segments.ndim != 2 or rec.segments.shape[0] < 1:
        raise ValidationError(f"record {rec.id}: needs at least one segment")
    if d_k is not None and rec.segments.shape[1] != d_k:
        raise ValidationError(
            f"record {rec.id}: embedding dim {rec.segments.shape[1]} != corpus dim {d_k}"
        )


def load_corpus(manifest_path) -> Corpus:
    """Load a JSON-lines manifest of ``{id, embedding_path, labels, split}``.

    Relative embedding paths resolve against the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    records: list[ParticipantRecord] = []
    d_k = None
    seen = set()
    for lineno, line in enumerate(manifest_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            rid = str(entry["id"])
            emb = Path(entry["embedding_path"])
            labels = list(entry["labels"])
            split = entry["split"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValidationError(f"{manifest_path}:{lineno}: malformed entry ({exc})") from exc
        if rid in seen:
            raise ValidationError(f"duplicate record id {rid}")
        seen.add(rid)
        if not emb.is_absolute():
            emb = base / emb
        rec = ParticipantRecord(rid, read_embedding_file(emb), labels, split)
        validate_record(rec, d_k)
        d_k = rec.segments.shape[1]
        records.append(rec)
    if not records:
        raise ValidationError(f"{manifest_path}: empty corpus")
    records.sort(key=lambda r: r.id)
    return Corpus(records, d_k)


def write_query_set(path, qs: QuerySet) -> None:
    """Writes ``path`` (SGE1, 8 x d) plus a ``.names.json`` sidecar."""
    path = Path(path)
    write_embedding_file(path, qs.vectors)
    path.with_suffix(".names.json").write_text(json.dumps(list(qs.symptom_names)) + "\n")


def read_query_set(path) -> QuerySet:
    path = Path(path)
    names = tuple(json.loads(path.with_suffix(".names.json").read_text()))
    return QuerySet(read_embedding_file(path), names)


# ---------------------------------------------------------------- synthetic corpus


@dataclass
class SyntheticCorpus:
    corpus: Corpus
    queries: QuerySet
    signatures: np.ndarray  # (8, d) orthonormal rows
    relevance: dict[str, list[list[int]]] = field(default_factory=dict)


def pseudo_queries(seed: int, d_k: int) -> QuerySet:
    """Eight unit-norm pseudo-random query vectors."""
    if d_k < 1:
        raise InvalidInputError("d_k must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((NUM_SYMPTOMS, d_k))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return QuerySet(v)


def orthonormal_signatures(rng: np.random.Generator, d_k: int) -> np.ndarray:
    if d_k < NUM_SYMPTOMS:
        raise InvalidInputError(f"need d_k >= 8 for orthonormal signatures, got {d_k}")
    q, r = np.linalg.qr(rng.standard_normal((d_k, NUM_SYMPTOMS)))
    # fix column signs so the basis is a deterministic function of the draw
    q = q * np.sign(np.diag(r))
    return q.T.copy()


def _f32(x: np.ndarray) -> np.ndarray:
    # in-memory values match what an SGE1 round trip would give
    return x.astype(np.float32).astype(np.float64)


def relevant_count(label: int, n_segments: int) -> int:
    return math.ceil(label * n_segments / 12)


# symptom indices whose evidence is spread thin vs. concentrated in the
# heterogeneous-dispersion corpus (sleep, tired / depressed, psychomotor)
DIFFUSE_SYMPTOMS = (2, 3)
CONCENTRATED_SYMPTOMS = (1, 7)
DISPERSIONS = ("uniform", "heterogeneous")


def planted_count(symptom: int, label: int, n_segments: int, dispersion: str) -> int:
    base = relevant_count(label, n_segments)
    if dispersion == "uniform" or label == 0:
        return base
    if symptom in DIFFUSE_SYMPTOMS:
        return min(n_segments, 2 * base)
    if symptom in CONCENTRATED_SYMPTOMS:
        return 1
    return base


def generate_synthetic(seed: int, n_train: int = 48, n_dev: int = 16, n_test: int = 16,
                       d_k: int = 64, n_range=(20, 120), dispersion: str = "uniform",
                       signal_noise: float = 0.1, background_noise: float = 1.0,
                       query_noise: float = 0.05) -> SyntheticCorpus:
    """Planted-signal corpus with known relevant segments per symptom.

    Symptom ``s`` with label ``y`` gets ``ceil(y * N / 12)`` relevant
    segments, each ``u_s * (1 + y)`` plus small noise; every other segment is
    isotropic background noise.  A segment picked by several symptoms
    carries the sum of their signatures.

    With ``dispersion="heterogeneous"`` the diffuse symptoms get twice as
    many relevant segments, each planted on top of background noise (weak
    evidence), while the concentrated symptoms get a single clean segment.
    """
    if min(n_train, n_dev, n_test) < 1:
        raise InvalidInputError("every split needs at least one participant")
    if dispersion not in DISPERSIONS:
        raise InvalidInputError(f"unknown dispersion {dispersion!r}")
    lo, hi = n_range
    if not 1 <= lo <= hi:
        raise InvalidInputError(f"bad n_range {n_range}")
    rng = np.random.default_rng(seed)
    u = orthonormal_signatures(rng, d_k)
    queries = QuerySet(_f32(u + query_noise * rng.standard_normal(u.shape)))

    records = []
    relevance = {}
    for split, count in zip(SPLITS, (n_train, n_dev, n_test)):
        for i in range(count):
            pid = f"{split}_{i:03d}"
            n = int(rng.integers(lo, hi + 1))
            labels = rng.integers(0, 4, NUM_SYMPTOMS)
            rel = []
            signal = np.zeros((n, d_k))
            clean = np.zeros(n, dtype=bool)
            for s in range(NUM_SYMPTOMS):
                k = planted_count(s, int(labels[s]), n, dispersion)
                idx = np.sort(rng.choice(n, k, replace=False))
                signal[idx] += u[s] * (1 + labels[s])
                weak = dispersion == "heterogeneous" and s in DIFFUSE_SYMPTOMS
                if not weak:
                    clean[idx] = True
                rel.append([int(j) for j in idx])
            noise = rng.standard_normal((n, d_k))
            sigma = np.where(clean, signal_noise, background_noise)[:, None]
            seg = signal + sigma * noise
            records.append(ParticipantRecord(pid, _f32(seg), [int(v) for v in labels], split))
            relevance[pid] = rel
    return SyntheticCorpus(Corpus(records, d_k), queries, u, relevance)


def write_synthetic(out_dir, syn: SyntheticCorpus) -> Path:
    """Write manifest, SGE1 embeddings, query set and relevance sets; returns the manifest path."""
    out = Path(out_dir)
    (out / "embeddings").mkdir(parents=True, exist_ok=True)
    lines = []
    for rec in sorted(syn.corpus.records, key=lambda r: r.id):
        rel_path = f"embeddings/{rec.id}.sge"
        write_embedding_file(out / rel_path, rec.segments)
        lines.append(json.dumps({"id": rec.id, "embedding_path": rel_path,
                                 "labels": rec.labels, "split": rec.split}))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    write_query_set(out / "queries.sge", syn.queries)
    (out / "relevance.json").write_text(
        json.dumps({k: syn.relevance[k] for k in sorted(syn.relevance)}) + "\n")
    return manifest
