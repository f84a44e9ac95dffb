"""High-level drivers tying ingest, training and evaluation together.

Shared by the CLI and the experiment harness so both run exactly the same
code paths.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from . import train as T
from .config import RunConfig
from .discretize import FeatureVocabulary, subset_vocabulary
from .errors import ConfigurationError, PreconditionError
from .evaluate import MetricsReport, evaluate_dataset
from .model import ModelParams
from .sequences import MaskingPolicy, chunk_sequences
from .train import StageSpec, TrainSchedule


def build_vocabulary(cfg: RunConfig) -> FeatureVocabulary:
    full = FeatureVocabulary()
    if cfg.feature_profile == "seven":
        return full
    return subset_vocabulary(full, list(cfg.feature_names))


def select_features(tokens: np.ndarray, cfg: RunConfig, full_vocab: FeatureVocabulary) -> np.ndarray:
    """Project a seven-feature token matrix onto the configured feature set."""
    cols = [full_vocab.feature_names.index(n) for n in cfg.feature_names]
    return np.ascontiguousarray(tokens[:, cols])


def masking_policy(cfg: RunConfig) -> MaskingPolicy:
    return MaskingPolicy(
        mask_probability=cfg.mask_probability,
        replace_fraction=cfg.replace_fraction,
        random_fraction=cfg.random_fraction,
        keep_fraction=cfg.keep_fraction,
        seed=cfg.seeds()["masking"],
    )


def schedule_from_config(cfg: RunConfig) -> TrainSchedule:
    return TrainSchedule(
        stages=(
            StageSpec(T.STAGE_MLM, cfg.stage_mlm),
            StageSpec(T.STAGE_HEAD, cfg.stage_head),
            StageSpec(T.STAGE_JOINT, cfg.stage_joint),
        ),
        learning_rate=cfg.learning_rate,
    )


def validate_paper_schedule(cfg: RunConfig) -> list[str]:
    """Assert the paper profile still carries the published schedule untouched."""
    checks = [
        ("mlm-pretrain iterations", cfg.stage_mlm, 400),
        ("head-only iterations", cfg.stage_head, 1100),
        ("joint iterations", cfg.stage_joint, 400),
        ("learning rate", cfg.learning_rate, 1e-5),
        ("training sequence length", cfg.sequence_length, 128),
        ("batch size", cfg.batch_size, 512),
        ("test sequence length", cfg.eval_sequence_length, 1024),
    ]
    lines = []
    for name, actual, expected in checks:
        if actual != expected:
            raise ConfigurationError(
                f"paper profile drifted: {name} is {actual}, published value is {expected}"
            )
        lines.append(f"schedule ok: {name} = {expected}")
    lines.append(f"total iterations = {cfg.stage_mlm + cfg.stage_head + cfg.stage_joint}")
    return lines


def init_model(cfg: RunConfig, vocab: FeatureVocabulary) -> ModelParams:
    model_cfg = M.config_from_vocab(
        vocab,
        per_feature_dim=cfg.per_feature_dim,
        layer_count=cfg.layer_count,
        head_count=cfg.head_count,
        feature_profile=cfg.feature_profile,
    )
    return M.init_params(model_cfg, seed=cfg.seeds()["init"])


@dataclass
class PipelineResult:
    params: ModelParams
    trace: list[T.TraceRecord]


def run_pretrain(cfg: RunConfig, tokens: np.ndarray, labels: np.ndarray,
                 vocab: FeatureVocabulary, params: ModelParams | None = None,
                 iterations: int | None = None) -> PipelineResult:
    """Masked-flow pretraining on the benign subset of a labeled token stream."""
    benign = labels == 0
    if not benign.any():
        raise PreconditionError("no benign flows available for pretraining")
    benign_tokens = tokens[benign]
    seqs = chunk_sequences(benign_tokens, cfg.sequence_length, vocab,
                           labels=np.zeros(benign_tokens.shape[0], dtype=np.int64))
    if params is None:
        params = init_model(cfg, vocab)
    trace = T.pretrain_mlm(
        params,
        seqs,
        iterations if iterations is not None else cfg.stage_mlm,
        masking_policy(cfg),
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
    )
    return PipelineResult(params=params, trace=trace)


def run_finetune(cfg: RunConfig, tokens: np.ndarray, labels: np.ndarray,
                 vocab: FeatureVocabulary, params: ModelParams,
                 head_iterations: int | None = None,
                 joint_iterations: int | None = None) -> PipelineResult:
    """Head-only then joint fine-tuning on the full labeled stream."""
    seqs = chunk_sequences(tokens, cfg.sequence_length, vocab, labels=labels)
    schedule = TrainSchedule(
        stages=(
            StageSpec(T.STAGE_MLM, cfg.stage_mlm),
            StageSpec(T.STAGE_HEAD, head_iterations or cfg.stage_head),
            StageSpec(T.STAGE_JOINT, joint_iterations or cfg.stage_joint),
        ),
        learning_rate=cfg.learning_rate,
    )
    trace = T.finetune_staged(params, seqs, schedule, batch_size=cfg.batch_size,
                              head_seed=cfg.seeds()["head"])
    return PipelineResult(params=params, trace=trace)


def run_evaluate(cfg: RunConfig, tokens: np.ndarray, labels: np.ndarray,
                 vocab: FeatureVocabulary, params: ModelParams,
                 dataset_id: str = "", checkpoint_id: str = "") -> tuple[MetricsReport, np.ndarray]:
    return evaluate_dataset(
        params, tokens, labels, vocab,
        sequence_length=cfg.eval_sequence_length,
        batch_size=cfg.eval_batch_size,
        dataset_id=dataset_id,
        checkpoint_id=checkpoint_id,
    )
