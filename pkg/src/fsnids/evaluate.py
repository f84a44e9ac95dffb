"""Metrics, dataset evaluation, and the context-free single-flow baseline.

Malicious is the positive class throughout. Metrics with zero denominators
are reported as explicit undefined markers (None), never silently zero.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import model as M
from ._fileio import atomic_write_text
from .discretize import FeatureVocabulary
from .errors import PreconditionError
from .model import ModelParams
from .sequences import chunk_sequences, make_batches, stack_tokens


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise PreconditionError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


@dataclass
class MetricsReport:
    counts: ConfusionCounts
    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    dataset_id: str = ""
    checkpoint_id: str = ""

    def to_dict(self) -> dict:
        return {
            "counts": {"tp": self.counts.tp, "tn": self.counts.tn,
                       "fp": self.counts.fp, "fn": self.counts.fn},
            "flow_count": self.counts.total,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "dataset_id": self.dataset_id,
            "checkpoint_id": self.checkpoint_id,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def confusion_from_predictions(predictions, labels) -> ConfusionCounts:
    """Tally a prediction vector against labels (1 = malicious = positive)."""
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise PreconditionError(f"length mismatch: {p.shape} vs {y.shape}")
    tp = int(((p == 1) & (y == 1)).sum())
    tn = int(((p == 0) & (y == 0)).sum())
    fp = int(((p == 1) & (y == 0)).sum())
    fn = int(((p == 0) & (y == 1)).sum())
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def compute_metrics(counts: ConfusionCounts, dataset_id: str = "",
                    checkpoint_id: str = "") -> MetricsReport:
    """Accuracy, precision, recall and F1 from confusion counts."""
    if counts.total == 0:
        raise PreconditionError("cannot compute metrics over zero flows")
    accuracy = (counts.tp + counts.tn) / counts.total
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp > 0 else None
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn > 0 else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return MetricsReport(counts=counts, accuracy=accuracy, precision=precision,
                         recall=recall, f1=f1, dataset_id=dataset_id,
                         checkpoint_id=checkpoint_id)


def format_report_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Plain-text table with the usual column order for side-by-side reading."""
    def fmt(x):
        return "undef " if x is None else f"{x:.4f}"

    width = max([len(name) for name, _ in rows] + [10])
    lines = [f"{'Classifier':<{width}}  Accuracy  F1-score  Recall  Precision"]
    for name, r in rows:
        lines.append(
            f"{name:<{width}}  {fmt(r.accuracy)}    {fmt(r.f1)}    {fmt(r.recall)}  {fmt(r.precision)}"
        )
    return "\n".join(lines)


def write_report(path, report: MetricsReport) -> None:
    atomic_write_text(path, report.to_json() + "\n")


def predict_flows(params: ModelParams, tokens: np.ndarray, vocab: FeatureVocabulary,
                  sequence_length: int = 1024, batch_size: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Per-flow predicted labels and malicious probabilities, in input order.

    The stream is chunked at sequence_length; trailing padding is excluded
    from the outputs, so len(result) == len(tokens).
    """
    params.set_trainable(lambda name: False)  # inference: no gradient graph
    seqs = chunk_sequences(tokens, sequence_length, vocab)
    preds = np.empty(tokens.shape[0], dtype=np.int64)
    probs = np.empty(tokens.shape[0], dtype=np.float64)
    cursor = 0
    for idxs in make_batches(seqs, batch_size, shuffle=False):
        batch_tokens, _, attention = stack_tokens(seqs, idxs)
        hidden, _ = M.forward_batch(params, batch_tokens, attention)
        out = M.classifier_head_forward(params, hidden)
        batch_preds = out.predictions()
        for row, i in enumerate(idxs):
            real = seqs[i].real_count
            preds[cursor : cursor + real] = batch_preds[row, :real]
            probs[cursor : cursor + real] = out.probs[row, :real, 1]
            cursor += real
    assert cursor == tokens.shape[0]
    return preds, probs


def evaluate_dataset(params: ModelParams, tokens: np.ndarray, labels: np.ndarray,
                     vocab: FeatureVocabulary, sequence_length: int = 1024,
                     batch_size: int = 16, dataset_id: str = "",
                     checkpoint_id: str = "") -> tuple[MetricsReport, np.ndarray]:
    """Chunk, classify, and score a labeled token stream. Returns (report, predictions)."""
    preds, _ = predict_flows(params, tokens, vocab, sequence_length, batch_size)
    counts = confusion_from_predictions(preds, labels)
    report = compute_metrics(counts, dataset_id=dataset_id, checkpoint_id=checkpoint_id)
    return report, preds


class ContextFreeBaseline:
    """Multinomial logistic model over one-hot single-flow feature tokens.

    Deliberately the simplest classifier that sees exactly one flow: any
    advantage the sequence model shows over it must come from context, not
    capacity. Trained full-batch with Adam from a zero initialization, so
    fitting is deterministic.
    """

    def __init__(self, vocab: FeatureVocabulary):
        self.vocab = vocab
        self.offsets = np.cumsum([0] + list(vocab.real_sizes))[:-1]
        self.dim = int(sum(vocab.real_sizes))
        self.weights = np.zeros((self.dim, 2), dtype=np.float64)
        self.bias = np.zeros(2, dtype=np.float64)

    def _flat_indices(self, tokens: np.ndarray) -> np.ndarray:
        return tokens + self.offsets[None, :]

    def _logits(self, flat_idx: np.ndarray) -> np.ndarray:
        return self.weights[flat_idx].sum(axis=1) + self.bias

    def fit(self, tokens: np.ndarray, labels: np.ndarray, learning_rate: float = 0.1,
            max_iterations: int = 800, tolerance: float = 1e-9) -> list[float]:
        """Full-batch Adam to convergence; returns the loss trace."""
        tokens = np.asarray(tokens)
        labels = np.asarray(labels)
        n = tokens.shape[0]
        if n == 0:
            raise PreconditionError("baseline needs at least one flow")
        if len(np.unique(labels)) < 2:
            warnings.warn("baseline training data has a single class; model is degenerate")
        flat_idx = self._flat_indices(tokens)
        flat = flat_idx.ravel()
        onehot_y = np.zeros((n, 2))
        onehot_y[np.arange(n), labels] = 1.0
        m_w = np.zeros_like(self.weights); v_w = np.zeros_like(self.weights)
        m_b = np.zeros_like(self.bias); v_b = np.zeros_like(self.bias)
        b1, b2, eps = 0.9, 0.999, 1e-8
        trace: list[float] = []
        prev = None
        for t in range(1, max_iterations + 1):
            logits = self._logits(flat_idx)
            zmax = logits.max(axis=1, keepdims=True)
            e = np.exp(logits - zmax)
            probs = e / e.sum(axis=1, keepdims=True)
            loss = float(-(onehot_y * np.log(np.clip(probs, 1e-300, None))).sum() / n)
            trace.append(loss)
            g = (probs - onehot_y) / n
            gw = np.stack(
                [np.bincount(flat, weights=np.repeat(g[:, c], tokens.shape[1]),
                             minlength=self.dim) for c in (0, 1)], axis=1
            )
            gb = g.sum(axis=0)
            m_w += (1 - b1) * (gw - m_w); v_w += (1 - b2) * (gw * gw - v_w)
            m_b += (1 - b1) * (gb - m_b); v_b += (1 - b2) * (gb * gb - v_b)
            c1, c2 = 1 - b1 ** t, 1 - b2 ** t
            self.weights -= learning_rate * (m_w / c1) / (np.sqrt(v_w / c2) + eps)
            self.bias -= learning_rate * (m_b / c1) / (np.sqrt(v_b / c2) + eps)
            if prev is not None and abs(prev - loss) < tolerance:
                break
            prev = loss
        return trace

    def predict_proba(self, tokens: np.ndarray) -> np.ndarray:
        logits = self._logits(self._flat_indices(np.asarray(tokens)))
        zmax = logits.max(axis=1, keepdims=True)
        e = np.exp(logits - zmax)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, tokens: np.ndarray) -> np.ndarray:
        """Labels with ties resolved to malicious, mirroring the sequence model."""
        p = self.predict_proba(tokens)
        return (p[:, 1] >= p[:, 0]).astype(np.int64)


def train_context_free_baseline(tokens: np.ndarray, labels: np.ndarray,
                                vocab: FeatureVocabulary) -> ContextFreeBaseline:
    baseline = ContextFreeBaseline(vocab)
    baseline.fit(tokens, labels)
    return baseline


def evaluate_baseline(baseline: ContextFreeBaseline, tokens: np.ndarray,
                      labels: np.ndarray, dataset_id: str = "") -> tuple[MetricsReport, np.ndarray]:
    preds = baseline.predict(tokens)
    counts = confusion_from_predictions(preds, labels)
    report = compute_metrics(counts, dataset_id=dataset_id, checkpoint_id="context-free-baseline")
    return report, preds
