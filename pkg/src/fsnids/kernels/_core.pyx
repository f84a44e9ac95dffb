# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel lane: fused single-pass versions of the hot training ops.

Contracts match ``fsnids.kernels.reference`` exactly; both float32 and
float64 inputs are supported via fused types.
"""
import numpy as np

cimport cython
from libc.math cimport exp, log, sqrt, tanh

ctypedef fused floating:
    float
    double

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


def layer_norm_forward(floating[:, ::1] x, floating[::1] gain, floating[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.empty((n, d), dtype=dtype)
    mean_arr = np.empty(n, dtype=dtype)
    rstd_arr = np.empty(n, dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef floating[::1] mean = mean_arr
    cdef floating[::1] rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double acc, mu, var, rs
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += x[i, j]
        mu = acc / d
        acc = 0.0
        for j in range(d):
            acc += (x[i, j] - mu) * (x[i, j] - mu)
        var = acc / d
        rs = 1.0 / sqrt(var + eps)
        mean[i] = <floating> mu
        rstd[i] = <floating> rs
        for j in range(d):
            out[i, j] = <floating> ((x[i, j] - mu) * rs * gain[j] + bias[j])
    return out_arr, mean_arr, rstd_arr


def layer_norm_backward(floating[:, ::1] gout, floating[:, ::1] x,
                        floating[::1] gain, floating[::1] mean, floating[::1] rstd):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    gx_arr = np.empty((n, d), dtype=dtype)
    ggain_arr = np.zeros(d, dtype=dtype)
    gbias_arr = np.zeros(d, dtype=dtype)
    cdef floating[:, ::1] gx = gx_arr
    cdef floating[::1] ggain = ggain_arr
    cdef floating[::1] gbias = gbias_arr
    cdef Py_ssize_t i, j
    cdef double m1, m2, xh, gh, mu, rs
    for i in range(n):
        mu = mean[i]
        rs = rstd[i]
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xh = (x[i, j] - mu) * rs
            gh = gout[i, j] * gain[j]
            m1 += gh
            m2 += gh * xh
            ggain[j] += <floating> (gout[i, j] * xh)
            gbias[j] += gout[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            xh = (x[i, j] - mu) * rs
            gh = gout[i, j] * gain[j]
            gx[i, j] = <floating> (rs * (gh - m1 - xh * m2))
    return gx_arr, ggain_arr, gbias_arr


def masked_softmax_forward(floating[:, :, ::1] scores, const unsigned char[:, ::1] mask):
    cdef Py_ssize_t b = scores.shape[0], q = scores.shape[1], l = scores.shape[2]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.empty((b, q, l), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, r, k
    cdef double mx, z, e
    cdef bint any_valid
    for i in range(b):
        for r in range(q):
            any_valid = False
            mx = 0.0
            for k in range(l):
                if mask[i, k]:
                    if not any_valid or scores[i, r, k] > mx:
                        mx = scores[i, r, k]
                    any_valid = True
            if not any_valid:
                for k in range(l):
                    out[i, r, k] = 0.0
                continue
            z = 0.0
            for k in range(l):
                if mask[i, k]:
                    e = exp(scores[i, r, k] - mx)
                    out[i, r, k] = <floating> e
                    z += e
                else:
                    out[i, r, k] = 0.0
            for k in range(l):
                out[i, r, k] = <floating> (out[i, r, k] / z)
    return out_arr


def masked_softmax_backward(floating[:, :, ::1] gout, floating[:, :, ::1] out):
    cdef Py_ssize_t b = out.shape[0], q = out.shape[1], l = out.shape[2]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    gs_arr = np.empty((b, q, l), dtype=dtype)
    cdef floating[:, :, ::1] gs = gs_arr
    cdef Py_ssize_t i, r, k
    cdef double dot
    for i in range(b):
        for r in range(q):
            dot = 0.0
            for k in range(l):
                dot += gout[i, r, k] * out[i, r, k]
            for k in range(l):
                gs[i, r, k] = <floating> (out[i, r, k] * (gout[i, r, k] - dot))
    return gs_arr


def gelu_forward(floating[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.empty(n, dtype=dtype)
    cdef floating[::1] out = out_arr
    cdef Py_ssize_t i
    cdef double v, inner
    for i in range(n):
        v = x[i]
        inner = GELU_C * (v + GELU_A * v * v * v)
        out[i] = <floating> (0.5 * v * (1.0 + tanh(inner)))
    return out_arr


def gelu_backward(floating[::1] gout, floating[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    gx_arr = np.empty(n, dtype=dtype)
    cdef floating[::1] gx = gx_arr
    cdef Py_ssize_t i
    cdef double v, inner, t, dinner
    for i in range(n):
        v = x[i]
        inner = GELU_C * (v + GELU_A * v * v * v)
        t = tanh(inner)
        dinner = GELU_C * (1.0 + 3.0 * GELU_A * v * v)
        gx[i] = <floating> (gout[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner))
    return gx_arr


def softmax_xent_forward(floating[:, ::1] logits, const long long[::1] targets, floating[::1] weights):
    cdef Py_ssize_t n = logits.shape[0], k = logits.shape[1]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    probs_arr = np.empty((n, k), dtype=dtype)
    cdef floating[:, ::1] probs = probs_arr
    cdef Py_ssize_t i, j
    cdef double mx, z, e, loss_sum = 0.0, w_sum = 0.0
    for i in range(n):
        mx = logits[i, 0]
        for j in range(1, k):
            if logits[i, j] > mx:
                mx = logits[i, j]
        z = 0.0
        for j in range(k):
            e = exp(logits[i, j] - mx)
            probs[i, j] = <floating> e
            z += e
        for j in range(k):
            probs[i, j] = <floating> (probs[i, j] / z)
        loss_sum += weights[i] * ((log(z) + mx) - logits[i, targets[i]])
        w_sum += weights[i]
    return loss_sum, w_sum, probs_arr


def softmax_xent_backward(floating[:, ::1] probs, const long long[::1] targets,
                          floating[::1] weights, double scale):
    cdef Py_ssize_t n = probs.shape[0], k = probs.shape[1]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    g_arr = np.empty((n, k), dtype=dtype)
    cdef floating[:, ::1] g = g_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(k):
            g[i, j] = <floating> (probs[i, j] * weights[i] * scale)
        g[i, targets[i]] = <floating> (g[i, targets[i]] - weights[i] * scale)
    return g_arr
