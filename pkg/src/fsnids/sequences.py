"""Assembling ordered flows into fixed-length sequences and masked batches.

A flow is the masking unit: when a flow is selected for corruption, all of
its feature tokens are corrupted together (the flow is the "word", not the
individual feature token). Flow order inside a sequence is never altered;
only whole sequences may be shuffled, and only when asked.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretize import FeatureVocabulary
from .errors import PreconditionError

DEFAULT_MASK_PROBABILITY = 0.15
DEFAULT_REPLACE_FRACTION = 0.80
DEFAULT_RANDOM_FRACTION = 0.10
DEFAULT_KEEP_FRACTION = 0.10


@dataclass
class FlowSequence:
    """One fixed-length chunk: tokens (L, F), optional labels, trailing padding."""

    tokens: np.ndarray
    labels: np.ndarray | None
    pad_count: int

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def real_count(self) -> int:
        return self.length - self.pad_count

    def attention_mask(self) -> np.ndarray:
        mask = np.zeros(self.length, dtype=bool)
        mask[: self.real_count] = True
        return mask


@dataclass(frozen=True)
class MaskingPolicy:
    """Corruption recipe for masked-flow pretraining."""

    mask_probability: float = DEFAULT_MASK_PROBABILITY
    replace_fraction: float = DEFAULT_REPLACE_FRACTION
    random_fraction: float = DEFAULT_RANDOM_FRACTION
    keep_fraction: float = DEFAULT_KEEP_FRACTION
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mask_probability <= 1.0:
            raise PreconditionError(f"mask_probability {self.mask_probability} outside [0, 1]")
        total = self.replace_fraction + self.random_fraction + self.keep_fraction
        if abs(total - 1.0) > 1e-9:
            raise PreconditionError(f"replace+random+keep fractions sum to {total}, not 1")


@dataclass
class MaskedBatch:
    """Corrupted inputs plus everything needed to score the reconstruction."""

    inputs: np.ndarray          # (B, L, F) corrupted tokens
    targets: np.ndarray         # (B, L, F) original tokens (valid where selected)
    selection_mask: np.ndarray  # (B, L) bool, flows chosen for corruption
    attention_mask: np.ndarray  # (B, L) bool, false on PAD


def chunk_sequences(tokens: np.ndarray, length: int, vocab: FeatureVocabulary,
                    labels: np.ndarray | None = None) -> list[FlowSequence]:
    """Split a flow stream into consecutive non-overlapping chunks of `length`.

    The final partial chunk is padded with PAD flows; concatenating the
    non-PAD prefixes of all chunks reproduces the input exactly.
    """
    if length < 1:
        raise PreconditionError(f"sequence length must be >= 1, got {length}")
    tokens = np.asarray(tokens)
    n = tokens.shape[0]
    out: list[FlowSequence] = []
    pad_row = vocab.pad_row()
    for start in range(0, n, length):
        stop = min(start + length, n)
        real = stop - start
        chunk = np.empty((length, vocab.feature_count), dtype=tokens.dtype)
        chunk[:real] = tokens[start:stop]
        chunk[real:] = pad_row
        chunk_labels = None
        if labels is not None:
            chunk_labels = np.full(length, -1, dtype=np.int64)
            chunk_labels[:real] = labels[start:stop]
        out.append(FlowSequence(tokens=chunk, labels=chunk_labels, pad_count=length - real))
    return out


def masking_rng(seed: int, sequence_index: int) -> np.random.Generator:
    """Deterministic generator for one (seed, sequence) pair."""
    return np.random.default_rng(np.random.SeedSequence((seed, sequence_index)))


def apply_mlm_mask(seq: FlowSequence, policy: MaskingPolicy, vocab: FeatureVocabulary,
                   sequence_index: int = 0) -> MaskedBatch:
    """Corrupt one sequence for the masked-flow objective.

    Each non-PAD flow is independently selected with mask_probability. A
    selected flow either becomes all-MASK, gets fresh uniform random real
    tokens per feature, or is kept unchanged, per the policy fractions.
    """
    if seq.length == 0:
        raise PreconditionError("cannot mask an empty sequence")
    rng = masking_rng(policy.seed, sequence_index)
    attention = seq.attention_mask()
    inputs = seq.tokens.copy()
    targets = seq.tokens.copy()
    selection = np.zeros(seq.length, dtype=bool)
    draws = rng.random(seq.length)
    selection[attention] = draws[attention] < policy.mask_probability
    mask_row = vocab.mask_row()
    for pos in np.flatnonzero(selection):
        mode = rng.random()
        if mode < policy.replace_fraction:
            inputs[pos] = mask_row
        elif mode < policy.replace_fraction + policy.random_fraction:
            for f, size in enumerate(vocab.real_sizes):
                inputs[pos, f] = rng.integers(0, size)
        # else: keep the original tokens
    return MaskedBatch(
        inputs=inputs[None],
        targets=targets[None],
        selection_mask=selection[None],
        attention_mask=attention[None],
    )


def collate(batches: list[MaskedBatch]) -> MaskedBatch:
    """Stack single-sequence masked views into one batch."""
    return MaskedBatch(
        inputs=np.concatenate([b.inputs for b in batches], axis=0),
        targets=np.concatenate([b.targets for b in batches], axis=0),
        selection_mask=np.concatenate([b.selection_mask for b in batches], axis=0),
        attention_mask=np.concatenate([b.attention_mask for b in batches], axis=0),
    )


def make_batches(seqs: list[FlowSequence], batch_size: int, shuffle: bool = False,
                 seed: int = 0) -> list[list[int]]:
    """Group sequence indices into batches of up to batch_size.

    shuffle permutes whole sequences only; flow order inside each sequence is
    untouched. With shuffle off, batches follow input order.
    """
    if batch_size < 1:
        raise PreconditionError(f"batch size must be >= 1, got {batch_size}")
    order = np.arange(len(seqs))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(seqs))
    return [order[i : i + batch_size].tolist() for i in range(0, len(seqs), batch_size)]


def stack_tokens(seqs: list[FlowSequence], indices: list[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(tokens (B,L,F), labels (B,L), attention (B,L)) for the given sequences."""
    tokens = np.stack([seqs[i].tokens for i in indices])
    attention = np.stack([seqs[i].attention_mask() for i in indices])
    if seqs and seqs[indices[0]].labels is not None:
        labels = np.stack([seqs[i].labels for i in indices])
    else:
        labels = np.full(tokens.shape[:2], -1, dtype=np.int64)
    return tokens, labels, attention
