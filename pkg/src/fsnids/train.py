"""Training: Adam, the three-stage schedule, gradients, and checkpoints.

Stage scoping is enforced twice over: tensors outside the active stage have
requires_grad switched off (their gradients stay exactly zero) and the
optimizer is rebuilt at each stage boundary over the in-scope tensors only,
so out-of-scope parameters are bitwise untouched.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from ._fileio import atomic_write_bytes, sha256_bytes
from .errors import (
    CheckpointCorruptError,
    ConfigurationError,
    IncompatibilityError,
    NumericalFaultError,
    PreconditionError,
)
from .model import ModelConfig, ModelParams
from .sequences import FlowSequence, MaskingPolicy, apply_mlm_mask, collate, make_batches, stack_tokens

CHECKPOINT_HEADER = "FSNIDS-CKPT v1"

STAGE_MLM = "mlm-pretrain"
STAGE_HEAD = "head-only"
STAGE_JOINT = "joint"

_STAGE_SCOPES = {
    STAGE_MLM: lambda name: not name.startswith("cls."),
    STAGE_HEAD: lambda name: name.startswith("cls."),
    STAGE_JOINT: lambda name: not name.startswith("mlm."),
}


@dataclass(frozen=True)
class StageSpec:
    name: str
    iterations: int

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError(f"stage {self.name}: iterations must be positive")
        if self.name not in _STAGE_SCOPES:
            raise ConfigurationError(f"unknown stage name {self.name!r}")


@dataclass(frozen=True)
class TrainSchedule:
    """Ordered stages with their iteration counts and the constant learning rate."""

    stages: tuple[StageSpec, ...] = (
        StageSpec(STAGE_MLM, 400),
        StageSpec(STAGE_HEAD, 1100),
        StageSpec(STAGE_JOINT, 400),
    )
    learning_rate: float = 1e-5

    def stage(self, name: str) -> StageSpec:
        for s in self.stages:
            if s.name == name:
                return s
        raise ConfigurationError(f"schedule has no stage {name!r}")

    def total_iterations(self) -> int:
        return sum(s.iterations for s in self.stages)


def stage_scope(name: str):
    return _STAGE_SCOPES[name]


@dataclass
class OptimizerState:
    """Adam accumulators for one set of named tensors."""

    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: OptimizerState, params: ModelParams,
              gradients: dict[str, np.ndarray]) -> None:
    """One bias-corrected Adam update in place; tensors absent from gradients are skipped."""
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in gradients.items():
        tensor = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        mhat = m / c1
        vhat = v / c2
        tensor.data -= (state.learning_rate * mhat / (np.sqrt(vhat) + state.epsilon)).astype(
            tensor.data.dtype
        )


def _collect_grads(params: ModelParams, check: bool = True) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    for name, tensor in params.named():
        if not tensor.requires_grad:
            continue
        g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if check and not np.isfinite(g).all():
            raise NumericalFaultError(f"non-finite gradient in tensor {name}")
        grads[name] = g
    return grads


def backward(params: ModelParams, batch, loss_kind: str) -> tuple[float, dict[str, np.ndarray]]:
    """Forward + reverse pass for one batch; returns (loss, gradient per tensor).

    loss_kind "mlm" expects a MaskedBatch; "classification" expects a
    (tokens, labels, attention_mask) triple. Tensors outside the trainable
    scope come back as exact zeros.
    """
    params.zero_grads()
    if loss_kind == "mlm":
        hidden, _ = M.forward_batch(params, batch.inputs, batch.attention_mask)
        logits = M.mlm_head_forward(params, hidden)
        loss = M.mlm_loss(logits, batch.targets, batch.selection_mask)
    elif loss_kind == "classification":
        tokens, labels, attention = batch
        hidden, _ = M.forward_batch(params, tokens, attention)
        out = M.classifier_head_forward(params, hidden)
        loss = M.classification_loss_graph(out.logits, labels, attention)
    else:
        raise ConfigurationError(f"unknown loss kind {loss_kind!r}")
    if loss.requires_grad:
        loss.backward()
    grads = _collect_grads(params)
    full = {
        name: grads.get(name, np.zeros_like(t.data)) for name, t in params.named()
    }
    return float(loss.data), full


@dataclass
class TraceRecord:
    iteration: int
    stage: str
    loss: float


def write_trace(path, trace: list[TraceRecord]) -> None:
    """Line-delimited loss trace: iteration, stage, loss."""
    lines = [f"{r.iteration} {r.stage} {r.loss:.8f}" for r in trace]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def _mask_seed_for_iteration(policy_seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence((policy_seed, iteration)).generate_state(1)[0])


def pretrain_mlm(params: ModelParams, benign_seqs: list[FlowSequence], iterations: int,
                 policy: MaskingPolicy, learning_rate: float,
                 batch_size: int) -> list[TraceRecord]:
    """Masked-flow pretraining over an unshuffled benign stream."""
    if not benign_seqs:
        raise PreconditionError("pretraining needs a non-empty benign stream")
    if any(s.labels is not None and (s.labels[: s.real_count] != 0).any() for s in benign_seqs):
        raise PreconditionError("pretraining stream contains non-benign flows")
    params.set_trainable(stage_scope(STAGE_MLM))
    opt = OptimizerState(learning_rate=learning_rate)
    batches = make_batches(benign_seqs, batch_size, shuffle=False)
    vocab = _vocab_from_config(params.config)
    trace: list[TraceRecord] = []
    for it in range(iterations):
        idxs = batches[it % len(batches)]
        seed = _mask_seed_for_iteration(policy.seed, it)
        iter_policy = MaskingPolicy(
            mask_probability=policy.mask_probability,
            replace_fraction=policy.replace_fraction,
            random_fraction=policy.random_fraction,
            keep_fraction=policy.keep_fraction,
            seed=seed,
        )
        masked = collate([apply_mlm_mask(benign_seqs[i], iter_policy, vocab, sequence_index=i)
                          for i in idxs])
        loss, grads = backward(params, masked, "mlm")
        adam_step(opt, params, {k: v for k, v in grads.items() if params[k].requires_grad})
        trace.append(TraceRecord(it, STAGE_MLM, loss))
    return trace


def finetune_staged(params: ModelParams, labeled_seqs: list[FlowSequence],
                    schedule: TrainSchedule, batch_size: int,
                    head_seed: int = 0) -> list[TraceRecord]:
    """Classifier fine-tuning: head-only on the frozen encoder, then joint.

    The classifier head is freshly initialized here; MLM heads stay in the
    parameter set but receive no fine-tune gradients.
    """
    for required in (STAGE_HEAD, STAGE_JOINT):
        schedule.stage(required)  # raises ConfigurationError when missing
    if not labeled_seqs:
        raise PreconditionError("fine-tuning needs labeled sequences")
    M.reinit_classifier(params, head_seed)
    batches = make_batches(labeled_seqs, batch_size, shuffle=False)
    trace: list[TraceRecord] = []
    iteration = 0
    for stage_name in (STAGE_HEAD, STAGE_JOINT):
        stage = schedule.stage(stage_name)
        params.set_trainable(stage_scope(stage_name))
        opt = OptimizerState(learning_rate=schedule.learning_rate)
        for _ in range(stage.iterations):
            idxs = batches[iteration % len(batches)]
            tokens, labels, attention = stack_tokens(labeled_seqs, idxs)
            loss, grads = backward(params, (tokens, labels, attention), "classification")
            adam_step(opt, params, {k: v for k, v in grads.items() if params[k].requires_grad})
            trace.append(TraceRecord(iteration, stage_name, loss))
            iteration += 1
    return trace


def _vocab_from_config(config: ModelConfig):
    from .discretize import FeatureVocabulary, subset_vocabulary

    full = FeatureVocabulary()
    if list(config.feature_names) == full.feature_names:
        return full
    return subset_vocabulary(full, list(config.feature_names))


# ---------------------------------------------------------------------------
# Checkpoints: header line, JSON manifest line, little-endian f32 blob,
# trailing sha256 of everything before it.
# ---------------------------------------------------------------------------


@dataclass
class CheckpointManifest:
    config: ModelConfig
    vocab_digest: str
    stages: list[dict]
    seeds: dict
    tensor_directory: list[dict] = field(default_factory=list)
    blob_sha256: str = ""
    format_version: str = CHECKPOINT_HEADER

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": self.format_version,
                "config": self.config.to_dict(),
                "feature_profile": self.config.feature_profile,
                "vocab_digest": self.vocab_digest,
                "stages": self.stages,
                "seeds": self.seeds,
                "adam_state_reset_per_stage": True,
                "tensors": self.tensor_directory,
                "blob_sha256": self.blob_sha256,
            },
            sort_keys=True,
        )


def save_checkpoint(params: ModelParams, manifest: CheckpointManifest, path) -> None:
    """Serialize params + manifest; the write is atomic and checksummed."""
    blob = bytearray()
    directory = []
    for name, tensor in params.named():
        data = np.ascontiguousarray(tensor.data, dtype="<f4")
        raw = data.tobytes()
        directory.append(
            {"name": name, "shape": list(tensor.data.shape),
             "offset": len(blob), "nbytes": len(raw)}
        )
        blob.extend(raw)
    manifest.tensor_directory = directory
    manifest.blob_sha256 = sha256_bytes(bytes(blob))
    head = CHECKPOINT_HEADER + "\n" + manifest.to_json() + "\n"
    body = head.encode() + bytes(blob)
    trailer = sha256_bytes(body) + "\n"
    atomic_write_bytes(path, body + trailer.encode())


def load_checkpoint(path, expected_vocab_digest: str | None = None,
                    expected_profile: str | None = None) -> tuple[ModelParams, dict]:
    """Read a checkpoint back; bit-exact round trip, checksum enforced."""
    raw = Path(path).read_bytes()
    if len(raw) < 65:
        raise CheckpointCorruptError(f"{path}: truncated checkpoint")
    body, trailer = raw[:-65], raw[-65:]
    expected = sha256_bytes(body) + "\n"
    if trailer.decode(errors="replace") != expected:
        raise CheckpointCorruptError(f"{path}: whole-file checksum mismatch")
    newline1 = body.index(b"\n")
    header = body[:newline1].decode()
    if header != CHECKPOINT_HEADER:
        raise CheckpointCorruptError(f"{path}: bad header {header!r}")
    newline2 = body.index(b"\n", newline1 + 1)
    manifest = json.loads(body[newline1 + 1 : newline2].decode())
    blob = body[newline2 + 1 :]
    if sha256_bytes(blob) != manifest["blob_sha256"]:
        raise CheckpointCorruptError(f"{path}: tensor blob checksum mismatch")
    if expected_vocab_digest is not None and manifest["vocab_digest"] != expected_vocab_digest:
        raise IncompatibilityError(
            f"vocabulary digest mismatch: checkpoint has {manifest['vocab_digest']}, "
            f"expected {expected_vocab_digest}"
        )
    if expected_profile is not None and manifest["feature_profile"] != expected_profile:
        raise IncompatibilityError(
            f"feature profile mismatch: checkpoint has {manifest['feature_profile']!r}, "
            f"expected {expected_profile!r}"
        )
    config = ModelConfig.from_dict(manifest["config"])
    params = ModelParams(config=config)
    from .autograd import Tensor

    for entry in manifest["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(blob):
            raise CheckpointCorruptError(f"{path}: tensor {entry['name']} overruns blob")
        data = np.frombuffer(blob[start : start + n], dtype="<f4").reshape(entry["shape"]).copy()
        params.tensors[entry["name"]] = Tensor(data, requires_grad=True, name=entry["name"])
    return params, manifest
