"""Hot numeric kernels: transformer layer forward/backward, Adam, Levenshtein.

Every kernel is written in numba-compatible numpy and compiled with ``@njit``
when numba is available.  Setting the environment variable ``CHARSUB_NO_NUMBA=1``
(or running without numba installed) selects the pure-numpy path; both paths
execute the same source, so results agree to floating-point noise.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_ENABLED = numba is not None and os.environ.get("CHARSUB_NO_NUMBA", "") not in (
    "1",
    "true",
    "yes",
)

_LN_EPS = 1e-5


def _jit(fn):
    if NUMBA_ENABLED:
        return numba.njit(cache=True)(fn)
    return fn


def py_func(fn):
    """Return the pure-python implementation behind a (possibly jitted) kernel."""
    return getattr(fn, "py_func", fn)


@_jit
def softmax_rows(x):
    # row-wise softmax of a 2D array
    n, m = x.shape
    out = np.empty((n, m))
    for i in range(n):
        mx = x[i].max()
        e = np.exp(x[i] - mx)
        out[i] = e / e.sum()
    return out


@_jit
def layer_norm_rows(x, gamma, beta):
    n, d = x.shape
    out = np.empty((n, d))
    xhat = np.empty((n, d))
    inv_std = np.empty(n)
    for i in range(n):
        mu = x[i].mean()
        var = np.mean((x[i] - mu) ** 2)
        iv = 1.0 / np.sqrt(var + _LN_EPS)
        xhat[i] = (x[i] - mu) * iv
        out[i] = gamma * xhat[i] + beta
        inv_std[i] = iv
    return out, xhat, inv_std


@_jit
def layer_norm_rows_backward(dout, xhat, inv_std, gamma):
    n, d = dout.shape
    dx = np.empty((n, d))
    dgamma = np.zeros(d)
    dbeta = np.zeros(d)
    for i in range(n):
        dgamma += dout[i] * xhat[i]
        dbeta += dout[i]
        dxhat = dout[i] * gamma
        m1 = dxhat.mean()
        m2 = np.mean(dxhat * xhat[i])
        dx[i] = inv_std[i] * (dxhat - m1 - xhat[i] * m2)
    return dx, dgamma, dbeta


@_jit
def encoder_layer_forward(x, wq, bq, wk, bk, wv, bv, wo, bo, g1, c1, w1, b1, w2, b2, g2, c2, n_heads):
    """One post-norm encoder layer: self-attention + ReLU feed-forward.

    Returns the layer output plus every intermediate the backward pass needs.
    """
    seq_len, d = x.shape
    dk = d // n_heads
    scale = 1.0 / np.sqrt(dk)

    q = x @ wq + bq
    k = x @ wk + bk
    v = x @ wv + bv

    probs = np.empty((n_heads, seq_len, seq_len))
    ctx = np.empty((seq_len, d))
    for h in range(n_heads):
        qh = np.ascontiguousarray(q[:, h * dk:(h + 1) * dk])
        kh = np.ascontiguousarray(k[:, h * dk:(h + 1) * dk])
        vh = np.ascontiguousarray(v[:, h * dk:(h + 1) * dk])
        scores = (qh @ kh.T) * scale
        p = softmax_rows(scores)
        probs[h] = p
        ctx[:, h * dk:(h + 1) * dk] = p @ vh

    attn_out = ctx @ wo + bo
    r1 = x + attn_out
    ln1, xhat1, inv1 = layer_norm_rows(r1, g1, c1)

    hpre = ln1 @ w1 + b1
    hrelu = np.maximum(hpre, 0.0)
    ff = hrelu @ w2 + b2
    r2 = ln1 + ff
    out, xhat2, inv2 = layer_norm_rows(r2, g2, c2)

    return out, q, k, v, probs, ctx, ln1, xhat1, inv1, hpre, xhat2, inv2


@_jit
def encoder_layer_backward(dout, x, wq, wk, wv, wo, g1, w1, w2, g2,
                           q, k, v, probs, ctx, ln1, xhat1, inv1, hpre, xhat2, inv2,
                           n_heads):
    seq_len, d = x.shape
    dk = d // n_heads
    scale = 1.0 / np.sqrt(dk)

    dr2, dg2, dc2 = layer_norm_rows_backward(dout, xhat2, inv2, g2)

    # feed-forward branch
    hrelu = np.maximum(hpre, 0.0)
    dff = dr2
    dw2 = hrelu.T @ dff
    db2 = dff.sum(axis=0)
    dhrelu = dff @ w2.T
    dhpre = dhrelu * (hpre > 0.0)
    dw1 = ln1.T @ dhpre
    db1 = dhpre.sum(axis=0)
    dln1 = dr2 + dhpre @ w1.T

    dr1, dg1, dc1 = layer_norm_rows_backward(dln1, xhat1, inv1, g1)

    # attention branch
    dattn = dr1
    dwo = ctx.T @ dattn
    dbo = dattn.sum(axis=0)
    dctx = dattn @ wo.T

    dq = np.empty((seq_len, d))
    dkk = np.empty((seq_len, d))
    dv = np.empty((seq_len, d))
    for h in range(n_heads):
        qh = np.ascontiguousarray(q[:, h * dk:(h + 1) * dk])
        kh = np.ascontiguousarray(k[:, h * dk:(h + 1) * dk])
        vh = np.ascontiguousarray(v[:, h * dk:(h + 1) * dk])
        p = np.ascontiguousarray(probs[h])
        dctx_h = np.ascontiguousarray(dctx[:, h * dk:(h + 1) * dk])
        dp = dctx_h @ vh.T
        dvh = p.T @ dctx_h
        # softmax backward per row
        dscores = np.empty((seq_len, seq_len))
        for i in range(seq_len):
            s = np.sum(dp[i] * p[i])
            dscores[i] = p[i] * (dp[i] - s)
        dscores *= scale
        dq[:, h * dk:(h + 1) * dk] = dscores @ kh
        dkk[:, h * dk:(h + 1) * dk] = dscores.T @ qh
        dv[:, h * dk:(h + 1) * dk] = dvh

    dwq = x.T @ dq
    dbq = dq.sum(axis=0)
    dwk = x.T @ dkk
    dbk = dkk.sum(axis=0)
    dwv = x.T @ dv
    dbv = dv.sum(axis=0)

    dx = dr1 + dq @ wq.T + dkk @ wk.T + dv @ wv.T
    return (dx, dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo,
            dg1, dc1, dw1, db1, dw2, db2, dg2, dc2)


@_jit
def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    # in-place Adam step with bias correction; step is 1-based
    m[:] = beta1 * m + (1.0 - beta1) * grad
    v[:] = beta2 * v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    param[:] = param - lr * mhat / (np.sqrt(vhat) + eps)


@_jit
def levenshtein_codes(a, b):
    """Unit-cost edit distance between two int sequences (two-row DP)."""
    n = a.shape[0]
    m = b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            best = prev[j - 1] + cost
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    d, nh = 8, 2
    x = np.zeros((3, d))
    w = np.zeros((d, d))
    b = np.zeros(d)
    g = np.ones(d)
    w1 = np.zeros((d, 2 * d))
    b1 = np.zeros(2 * d)
    w2 = np.zeros((2 * d, d))
    res = encoder_layer_forward(x, w, b, w, b, w, b, w, b, g, b, w1, b1, w2, b, g, b, nh)
    encoder_layer_backward(x, x, w, w, w, w, g, w1, w2, g, *res[1:], nh)
    p = np.zeros(4)
    adam_update(p, p.copy(), p.copy(), p.copy(), 1, 0.1, 0.9, 0.999, 1e-8)
    levenshtein_codes(np.array([1, 2], dtype=np.int32), np.array([1], dtype=np.int32))
