"""Pure-numpy kernel lane.

Same contracts as the compiled lane in ``_core.pyx``; used as the fallback
when the extension is unavailable and as the numerical reference in tests.
All kernels accept float32 or float64 and preserve the input dtype.
"""
from __future__ import annotations

import numpy as np

GELU_C = 0.7978845608028654  # sqrt(2/pi)
GELU_A = 0.044715


def layer_norm_forward(x, gain, bias, eps):
    """Normalize rows of x (N, D); returns (out, mean, rstd)."""
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    out = xhat * gain[None, :] + bias[None, :]
    return out.astype(x.dtype, copy=False), mean.astype(x.dtype, copy=False), rstd.astype(x.dtype, copy=False)


def layer_norm_backward(gout, x, gain, mean, rstd):
    """Gradients of layer_norm_forward; returns (gx, ggain, gbias)."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    gxhat = gout * gain[None, :]
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (gxhat - m1 - xhat * m2)
    ggain = (gout * xhat).sum(axis=0)
    gbias = gout.sum(axis=0)
    return (
        gx.astype(x.dtype, copy=False),
        ggain.astype(x.dtype, copy=False),
        gbias.astype(x.dtype, copy=False),
    )


def masked_softmax_forward(scores, mask):
    """Row softmax of scores (B, Q, L) over keys where mask (B, L) is true.

    Masked keys get exactly zero weight. A row with no valid key comes back
    all-zero instead of NaN.
    """
    neg = np.where(mask[:, None, :], 0.0, -np.inf)
    shifted = scores + neg
    rowmax = shifted.max(axis=2, keepdims=True)
    # rows with no valid key have rowmax == -inf; exp of -inf - -inf would be NaN
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.exp(shifted - rowmax)
    e = np.where(mask[:, None, :], e, 0.0)
    z = e.sum(axis=2, keepdims=True)
    out = np.divide(e, z, out=np.zeros_like(e), where=z > 0)
    return out.astype(scores.dtype, copy=False)


def masked_softmax_backward(gout, out):
    """Gradient through masked_softmax_forward given its output."""
    dot = (gout * out).sum(axis=2, keepdims=True)
    return (out * (gout - dot)).astype(out.dtype, copy=False)


def gelu_forward(x):
    """Tanh-approximation GELU, elementwise."""
    inner = GELU_C * (x + GELU_A * x * x * x)
    return (0.5 * x * (1.0 + np.tanh(inner))).astype(x.dtype, copy=False)


def gelu_backward(gout, x):
    """Gradient of gelu_forward."""
    inner = GELU_C * (x + GELU_A * x * x * x)
    t = np.tanh(inner)
    dinner = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
    gx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
    return (gout * gx).astype(x.dtype, copy=False)


def softmax_xent_forward(logits, targets, weights):
    """Weighted softmax cross-entropy over rows of logits (N, K).

    targets (N,) int64 pick the true class; weights (N,) scale each row's
    contribution (zero drops the row). Returns (loss_sum, weight_sum, probs)
    where loss_sum = sum_i w_i * (logsumexp_i - logit_i[t_i]).
    """
    rowmax = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - rowmax)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    lse = np.log(z[:, 0]) + rowmax[:, 0]
    picked = logits[np.arange(logits.shape[0]), targets]
    loss_sum = float((weights * (lse - picked)).sum())
    return loss_sum, float(weights.sum()), probs.astype(logits.dtype, copy=False)


def softmax_xent_backward(probs, targets, weights, scale):
    """Gradient wrt logits; scale folds in the upstream grad and 1/weight_sum."""
    g = probs * weights[:, None]
    g[np.arange(probs.shape[0]), targets] -= weights
    return (g * scale).astype(probs.dtype, copy=False)
