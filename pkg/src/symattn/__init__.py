"""Symptom-guided cross-attention for PHQ-8 severity regression, in plain numpy."""

from .data import (
    Corpus,
    ParticipantRecord,
    QuerySet,
    generate_synthetic,
    load_corpus,
    pseudo_queries,
    read_embedding_file,
    write_embedding_file,
)
from .metrics import MetricsReport, ccc, evaluate, mae, rmse
from .model import (
    SYMPTOM_NAMES,
    ForwardOutput,
    ModelConfig,
    ModelParams,
    backward,
    batch_forward_backward,
    export_attention,
    forward,
    init_params,
)
from .optim import AdamWConfig, OptimState, adamw_step, clip_global_norm, train

__version__ = "0.1.0"
