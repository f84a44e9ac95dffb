"""The sequence encoder and its heads as pure functions over explicit params.

Per-feature token embeddings are concatenated into one flow vector; the
encoder is a bidirectional transformer with scaled dot-product attention,
post-norm layer ordering, GELU feed-forward and deliberately NO positional
encoding — two flows with identical tokens embed identically wherever they
sit, which makes the encoder permutation-equivariant within a sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .discretize import FeatureVocabulary
from .errors import ConfigurationError, NumericalFaultError, PreconditionError

LN_EPS = 1e-12
INIT_STD = 0.02
# std of a standard normal truncated to [-2, 2]; rescaling by it makes the
# post-truncation standard deviation equal the configured value
_TRUNC_STD = 0.8796260800127963

# running count of mlm_loss calls that saw an empty selection
empty_selection_events = 0


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; model_dim is always feature_count * per_feature_dim."""

    feature_names: tuple[str, ...]
    vocab_total_sizes: tuple[int, ...]   # real tokens + MASK + PAD, per feature
    vocab_real_sizes: tuple[int, ...]    # prediction targets, per feature
    per_feature_dim: int = 128
    layer_count: int = 1
    head_count: int = 1
    class_count: int = 2
    feature_profile: str = "seven"

    def __post_init__(self):
        if len(self.feature_names) != len(self.vocab_total_sizes):
            raise ConfigurationError("feature_names and vocab sizes disagree")
        if self.per_feature_dim < 1 or self.layer_count < 1 or self.head_count < 1:
            raise ConfigurationError("dims, layers and heads must be positive")
        if self.model_dim % self.head_count != 0:
            raise ConfigurationError(
                f"model_dim {self.model_dim} not divisible by head_count {self.head_count}"
            )

    @property
    def feature_count(self) -> int:
        return len(self.feature_names)

    @property
    def model_dim(self) -> int:
        return self.feature_count * self.per_feature_dim

    @property
    def ffn_dim(self) -> int:
        return 4 * self.model_dim

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "vocab_total_sizes": list(self.vocab_total_sizes),
            "vocab_real_sizes": list(self.vocab_real_sizes),
            "per_feature_dim": self.per_feature_dim,
            "layer_count": self.layer_count,
            "head_count": self.head_count,
            "class_count": self.class_count,
            "feature_profile": self.feature_profile,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            feature_names=tuple(d["feature_names"]),
            vocab_total_sizes=tuple(d["vocab_total_sizes"]),
            vocab_real_sizes=tuple(d["vocab_real_sizes"]),
            per_feature_dim=d["per_feature_dim"],
            layer_count=d["layer_count"],
            head_count=d["head_count"],
            class_count=d["class_count"],
            feature_profile=d.get("feature_profile", "seven"),
        )


def config_from_vocab(vocab: FeatureVocabulary, per_feature_dim: int = 128,
                      layer_count: int = 1, head_count: int = 1,
                      feature_profile: str = "seven") -> ModelConfig:
    return ModelConfig(
        feature_names=tuple(vocab.feature_names),
        vocab_total_sizes=tuple(vocab.total_sizes),
        vocab_real_sizes=tuple(vocab.real_sizes),
        per_feature_dim=per_feature_dim,
        layer_count=layer_count,
        head_count=head_count,
        feature_profile=feature_profile,
    )


@dataclass
class ModelParams:
    """All trainable tensors, in a fixed enumerable order."""

    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def named(self) -> list[tuple[str, Tensor]]:
        return list(self.tensors.items())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def set_trainable(self, selector) -> None:
        """selector(name) decides which tensors receive gradients."""
        for name, t in self.tensors.items():
            t.requires_grad = bool(selector(name))
            t.grad = None

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def astype(self, dtype) -> "ModelParams":
        """Deep copy in another float dtype (float64 for gradient checks)."""
        out = ModelParams(config=self.config)
        for name, t in self.tensors.items():
            nt = Tensor(t.data.astype(dtype), requires_grad=t.requires_grad, name=name)
            out.tensors[name] = nt
        return out

    def copy(self) -> "ModelParams":
        return self.astype(self.tensors[next(iter(self.tensors))].data.dtype)


def _truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal truncated at two sigma, rescaled so the result's std equals `std`."""
    draws = rng.standard_normal(shape)
    bad = np.abs(draws) > 2.0
    while bad.any():
        draws[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(draws) > 2.0
    return (draws * (std / _TRUNC_STD)).astype(dtype)


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Fresh parameters: truncated-normal weights, zero biases, unit LN gains."""
    rng = np.random.default_rng(seed)
    d = config.per_feature_dim
    dim = config.model_dim
    params = ModelParams(config=config)

    def w(name, shape):
        params.tensors[name] = Tensor(_truncated_normal(rng, shape, INIT_STD, dtype),
                                      requires_grad=True, name=name)

    def zeros(name, shape):
        params.tensors[name] = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)

    def ones(name, shape):
        params.tensors[name] = Tensor(np.ones(shape, dtype=dtype), requires_grad=True, name=name)

    for fname, vsize in zip(config.feature_names, config.vocab_total_sizes):
        w(f"embed.{fname}", (vsize, d))
    for i in range(config.layer_count):
        p = f"enc{i}"
        for proj in ("wq", "wk", "wv", "wo"):
            w(f"{p}.attn.{proj}", (dim, dim))
        for proj in ("bq", "bk", "bv", "bo"):
            zeros(f"{p}.attn.{proj}", (dim,))
        ones(f"{p}.ln1.gain", (dim,))
        zeros(f"{p}.ln1.bias", (dim,))
        w(f"{p}.ffn.w1", (dim, config.ffn_dim))
        zeros(f"{p}.ffn.b1", (config.ffn_dim,))
        w(f"{p}.ffn.w2", (config.ffn_dim, dim))
        zeros(f"{p}.ffn.b2", (dim,))
        ones(f"{p}.ln2.gain", (dim,))
        zeros(f"{p}.ln2.bias", (dim,))
    for fname, rsize in zip(config.feature_names, config.vocab_real_sizes):
        w(f"mlm.{fname}.w", (dim, rsize))
        zeros(f"mlm.{fname}.b", (rsize,))
    w("cls.w", (dim, config.class_count))
    zeros("cls.b", (config.class_count,))
    return params


def reinit_classifier(params: ModelParams, seed: int) -> None:
    """Fresh classifier head at fine-tune start; everything else untouched."""
    rng = np.random.default_rng(seed)
    dtype = params["cls.w"].data.dtype
    params["cls.w"].data = _truncated_normal(
        rng, params["cls.w"].data.shape, INIT_STD, dtype
    )
    params["cls.b"].data = np.zeros_like(params["cls.b"].data)


@dataclass
class ForwardActivations:
    """What a forward pass exposes for inspection and tests."""

    embedded: np.ndarray                 # (B, L, D)
    hidden: np.ndarray                   # (B, L, D)
    attention: list[np.ndarray]          # per layer, (B, H, L, L)


def embed_flows(params: ModelParams, tokens: np.ndarray) -> Tensor:
    """Concatenate per-feature embedding lookups into (B, L, D). No positions added."""
    cfg = params.config
    tokens = np.asarray(tokens)
    for f, (fname, vsize) in enumerate(zip(cfg.feature_names, cfg.vocab_total_sizes)):
        col = tokens[..., f]
        if col.min(initial=0) < 0 or col.max(initial=0) >= vsize:
            raise IndexError(f"token id out of range for feature {fname} (vocab {vsize})")
    parts = [ag.lookup(params[f"embed.{fname}"], tokens[..., f])
             for f, fname in enumerate(cfg.feature_names)]
    return ag.concat_last(parts)


def encoder_forward(params: ModelParams, embedded: Tensor,
                    attention_mask: np.ndarray) -> tuple[Tensor, list[Tensor]]:
    """Run the transformer encoder stack; returns hidden states and attention maps."""
    cfg = params.config
    b, l, dim = embedded.data.shape
    if dim != cfg.model_dim:
        raise ConfigurationError(f"embedded dim {dim} != model dim {cfg.model_dim}")
    heads = cfg.head_count
    dh = dim // heads
    inv_scale = 1.0 / math.sqrt(dh)
    x = embedded
    attn_maps: list[Tensor] = []
    for i in range(cfg.layer_count):
        p = f"enc{i}"

        def split_heads(t):
            return ag.transpose(ag.reshape(t, (b, l, heads, dh)), (0, 2, 1, 3))

        q = split_heads(ag.linear(x, params[f"{p}.attn.wq"], params[f"{p}.attn.bq"]))
        k = split_heads(ag.linear(x, params[f"{p}.attn.wk"], params[f"{p}.attn.bk"]))
        v = split_heads(ag.linear(x, params[f"{p}.attn.wv"], params[f"{p}.attn.bv"]))
        scores = ag.scale(ag.bmm(q, ag.transpose(k, (0, 1, 3, 2))), inv_scale)
        flat = ag.reshape(scores, (b, heads * l, l))
        weights = ag.masked_softmax(flat, attention_mask)
        attn = ag.reshape(weights, (b, heads, l, l))
        ctx = ag.reshape(ag.transpose(ag.bmm(attn, v), (0, 2, 1, 3)), (b, l, dim))
        attn_out = ag.linear(ctx, params[f"{p}.attn.wo"], params[f"{p}.attn.bo"])
        h1 = ag.layer_norm(ag.add(x, attn_out),
                           params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"], LN_EPS)
        ffn = ag.linear(ag.gelu(ag.linear(h1, params[f"{p}.ffn.w1"], params[f"{p}.ffn.b1"])),
                        params[f"{p}.ffn.w2"], params[f"{p}.ffn.b2"])
        x = ag.layer_norm(ag.add(h1, ffn),
                          params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"], LN_EPS)
        if not np.isfinite(x.data).all():
            raise NumericalFaultError(f"non-finite activation leaving encoder layer {i}")
        attn_maps.append(attn)
    return x, attn_maps


def mlm_head_forward(params: ModelParams, hidden: Tensor) -> list[Tensor]:
    """Per-feature logits over real tokens only (MASK/PAD are never predicted)."""
    return [ag.linear(hidden, params[f"mlm.{fname}.w"], params[f"mlm.{fname}.b"])
            for fname in params.config.feature_names]


@dataclass
class ClassifierOutput:
    logits: Tensor            # (B, L, 2), graph-connected for training
    probs: np.ndarray         # (B, L, 2) softmax of logits

    def predictions(self) -> np.ndarray:
        """Argmax labels with ties resolved to malicious (fail-closed)."""
        return (self.probs[..., 1] >= self.probs[..., 0]).astype(np.int64)


def classifier_head_forward(params: ModelParams, hidden: Tensor) -> ClassifierOutput:
    """Linear map D -> 2 with softmax probabilities per position."""
    logits = ag.linear(hidden, params["cls.w"], params["cls.b"])
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    probs = e / e.sum(axis=-1, keepdims=True)
    return ClassifierOutput(logits=logits, probs=probs)


def mlm_loss(logits: list[Tensor], targets: np.ndarray, selection_mask: np.ndarray) -> Tensor:
    """Mean cross-entropy over selected flows and features; zero when none selected."""
    global empty_selection_events
    selected = selection_mask.reshape(-1)
    if not selected.any():
        empty_selection_events += 1
        return Tensor(np.asarray(0.0, dtype=logits[0].data.dtype))
    per_feature = []
    for f, logit in enumerate(logits):
        k = logit.data.shape[-1]
        flat = ag.reshape(logit, (-1, k))
        w = selected.astype(logit.data.dtype)
        # unselected rows carry weight zero; clamp their target ids (PAD ids
        # sit past the real-token range these heads predict over)
        t = np.where(selected, targets[..., f].reshape(-1), 0)
        per_feature.append(ag.cross_entropy(flat, t, w))
    total = per_feature[0]
    for t in per_feature[1:]:
        total = ag.add(total, t)
    return ag.scale(total, 1.0 / len(per_feature))


def classification_loss(probabilities: np.ndarray, labels: np.ndarray,
                        attention_mask: np.ndarray) -> float:
    """Mean cross-entropy of class probabilities against labels on non-PAD flows."""
    mask = np.asarray(attention_mask, dtype=bool)
    if not mask.any():
        raise PreconditionError("classification loss needs at least one non-PAD flow")
    p = np.asarray(probabilities, dtype=np.float64)[mask]
    y = np.asarray(labels)[mask]
    picked = p[np.arange(p.shape[0]), y]
    with np.errstate(divide="ignore"):
        logs = np.log(picked)
    return float(-logs.mean())


def classification_loss_graph(logits: Tensor, labels: np.ndarray,
                              attention_mask: np.ndarray) -> Tensor:
    """Graph-connected version of classification_loss, fed by head logits."""
    mask = np.asarray(attention_mask, dtype=bool)
    if not mask.any():
        raise PreconditionError("classification loss needs at least one non-PAD flow")
    k = logits.data.shape[-1]
    flat = ag.reshape(logits, (-1, k))
    weights = mask.reshape(-1).astype(logits.data.dtype)
    targets = np.where(mask, labels, 0).reshape(-1)
    return ag.cross_entropy(flat, targets, weights)


def forward_batch(params: ModelParams, tokens: np.ndarray,
                  attention_mask: np.ndarray) -> tuple[Tensor, ForwardActivations]:
    """Embed + encode one batch; returns hidden tensor and recorded activations."""
    embedded = embed_flows(params, tokens)
    hidden, attn = encoder_forward(params, embedded, attention_mask)
    acts = ForwardActivations(
        embedded=embedded.data,
        hidden=hidden.data,
        attention=[a.data for a in attn],
    )
    return hidden, acts
