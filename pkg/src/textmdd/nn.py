"""Forward/backward primitives for the toy encoders.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache and returns the input gradient
plus a dict of parameter gradients keyed like the parameter dict.
"""
from __future__ import annotations

import numpy as np

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


def gelu_forward(x):
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    return 0.5 * x * (1.0 + th), (x, th)


def gelu_backward(dy, cache):
    x, th = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * dinner)


def layer_norm_forward(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layer_norm_backward(dy, cache):
    xhat, inv, gamma = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def softmax(x, axis=-1):
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy, y, axis=-1):
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def sigmoid(x):
    # split branches so large |x| never overflows exp
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def attention_block_forward(x, p, prefix):
    """Single-head self-attention with residual and layer norm."""
    d = x.shape[1]
    q = x @ p[prefix + "Wq"]
    k = x @ p[prefix + "Wk"]
    v = x @ p[prefix + "Wv"]
    a = softmax(q @ k.T / np.sqrt(d), axis=1)
    ctx = a @ v
    o = ctx @ p[prefix + "Wo"]
    y, ln_cache = layer_norm_forward(x + o, p[prefix + "ln_g"], p[prefix + "ln_b"])
    return y, (x, q, k, v, a, ctx, ln_cache)


def attention_block_backward(dy, cache, p, prefix):
    x, q, k, v, a, ctx, ln_cache = cache
    d = x.shape[1]
    dres, dg, db = layer_norm_backward(dy, ln_cache)
    grads = {prefix + "ln_g": dg, prefix + "ln_b": db}
    grads[prefix + "Wo"] = ctx.T @ dres
    dctx = dres @ p[prefix + "Wo"].T
    da = dctx @ v.T
    dv = a.T @ dctx
    ds = softmax_backward(da, a, axis=1) / np.sqrt(d)
    dq = ds @ k
    dk = ds.T @ q
    grads[prefix + "Wq"] = x.T @ dq
    grads[prefix + "Wk"] = x.T @ dk
    grads[prefix + "Wv"] = x.T @ dv
    dx = dres + dq @ p[prefix + "Wq"].T + dk @ p[prefix + "Wk"].T + dv @ p[prefix + "Wv"].T
    return dx, grads
