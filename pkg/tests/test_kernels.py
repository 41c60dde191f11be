"""Numeric kernel tests: jitted vs pure-python parity, finite-difference
checks for the encoder layer, Adam semantics, and Levenshtein correctness."""

import numpy as np
import pytest

from charsub import kernels

RNG = np.random.default_rng(12345)


def _random_layer(d=8, ff=16):
    def w(*shape):
        return RNG.normal(0.0, 0.3, shape)
    return dict(wq=w(d, d), bq=w(d), wk=w(d, d), bk=w(d), wv=w(d, d), bv=w(d),
                wo=w(d, d), bo=w(d), g1=1.0 + 0.1 * w(d), c1=0.1 * w(d),
                w1=w(d, ff), b1=w(ff), w2=w(ff, d), b2=w(d),
                g2=1.0 + 0.1 * w(d), c2=0.1 * w(d))


def _forward_args(p):
    return (p["wq"], p["bq"], p["wk"], p["bk"], p["wv"], p["bv"], p["wo"],
            p["bo"], p["g1"], p["c1"], p["w1"], p["b1"], p["w2"], p["b2"],
            p["g2"], p["c2"])


def test_softmax_rows_matches_reference():
    x = RNG.normal(0.0, 3.0, (5, 7))
    out = kernels.softmax_rows(x)
    ref = np.exp(x - x.max(axis=1, keepdims=True))
    ref /= ref.sum(axis=1, keepdims=True)
    assert np.allclose(out, ref, atol=1e-12)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)


def _paths_agree(a, b):
    # jit and pure-python paths may differ by a couple of ULPs (libm vs
    # numpy transcendentals), so parity is asserted at 1e-12 relative
    return np.allclose(np.asarray(a), np.asarray(b), rtol=1e-12, atol=1e-14)


def test_softmax_rows_jit_matches_py_func():
    x = RNG.normal(0.0, 2.0, (4, 9))
    assert _paths_agree(kernels.softmax_rows(x), kernels.py_func(kernels.softmax_rows)(x))


def test_layer_norm_rows_parity_and_stats():
    x = RNG.normal(1.0, 2.0, (6, 8))
    gamma = np.ones(8)
    beta = np.zeros(8)
    out = kernels.layer_norm_rows(x, gamma, beta)
    ref = kernels.py_func(kernels.layer_norm_rows)(x, gamma, beta)
    assert _paths_agree(out[0], ref[0])
    normed = out[0]
    assert np.allclose(normed.mean(axis=1), 0.0, atol=1e-10)
    assert np.allclose(normed.std(axis=1), 1.0, atol=1e-3)


def test_encoder_layer_forward_jit_matches_py_func():
    p = _random_layer()
    x = RNG.normal(0.0, 1.0, (5, 8))
    jit = kernels.encoder_layer_forward(x, *_forward_args(p), 2)
    ref = kernels.py_func(kernels.encoder_layer_forward)(x, *_forward_args(p), 2)
    for a, b in zip(jit, ref):
        assert _paths_agree(a, b)


def test_encoder_layer_backward_jit_matches_py_func():
    p = _random_layer()
    x = RNG.normal(0.0, 1.0, (4, 8))
    res = kernels.encoder_layer_forward(x, *_forward_args(p), 2)
    dout = RNG.normal(0.0, 1.0, (4, 8))
    args = (np.ascontiguousarray(dout), x, p["wq"], p["wk"], p["wv"], p["wo"],
            p["g1"], p["w1"], p["w2"], p["g2"], *res[1:], 2)
    jit = kernels.encoder_layer_backward(*args)
    ref = kernels.py_func(kernels.encoder_layer_backward)(*args)
    for a, b in zip(jit, ref):
        assert _paths_agree(a, b)


def test_encoder_layer_backward_matches_finite_differences():
    p = _random_layer()
    x = RNG.normal(0.0, 1.0, (4, 8))
    probe = RNG.normal(0.0, 1.0, (4, 8))

    def loss(xv):
        out = kernels.encoder_layer_forward(xv, *_forward_args(p), 2)[0]
        return float((out * probe).sum())

    res = kernels.encoder_layer_forward(x, *_forward_args(p), 2)
    dx = kernels.encoder_layer_backward(
        np.ascontiguousarray(probe), x, p["wq"], p["wk"], p["wv"], p["wo"],
        p["g1"], p["w1"], p["w2"], p["g2"], *res[1:], 2)[0]

    h = 1e-6
    fd = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            xp = x.copy()
            xp[i, j] += h
            xm = x.copy()
            xm[i, j] -= h
            fd[i, j] = (loss(xp) - loss(xm)) / (2 * h)
    rel = np.abs(dx - fd).max() / max(np.abs(fd).max(), 1e-12)
    assert rel < 1e-5


def test_adam_update_single_step_matches_formula():
    param = np.array([1.0, -2.0, 0.5])
    grad = np.array([0.1, -0.3, 0.0])
    m = np.zeros(3)
    v = np.zeros(3)
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    kernels.adam_update(param, grad, m, v, 1, lr, b1, b2, eps)

    m_ref = (1 - b1) * grad
    v_ref = (1 - b2) * grad ** 2
    mhat = m_ref / (1 - b1)
    vhat = v_ref / (1 - b2)
    expect = np.array([1.0, -2.0, 0.5]) - lr * mhat / (np.sqrt(vhat) + eps)
    assert np.allclose(param, expect, atol=1e-12)
    assert np.allclose(m, m_ref, atol=1e-12)
    assert np.allclose(v, v_ref, atol=1e-12)


def test_adam_update_jit_matches_py_func_over_steps():
    grads = RNG.normal(0.0, 1.0, (5, 4, 6))
    states = []
    for impl in (kernels.adam_update, kernels.py_func(kernels.adam_update)):
        param = np.ones((4, 6))
        m = np.zeros((4, 6))
        v = np.zeros((4, 6))
        for t, g in enumerate(grads, start=1):
            impl(param, np.ascontiguousarray(g), m, v, t, 0.05, 0.9, 0.999, 1e-8)
        states.append(param.copy())
    assert _paths_agree(states[0], states[1])


def _lev_oracle(a: str, b: str) -> int:
    # full-matrix DP, quadratic space, kept independent of the kernel
    n, m = len(a), len(b)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dp[i][0] = i
    for j in range(m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            dp[i][j] = min(dp[i - 1][j] + 1, dp[i][j - 1] + 1,
                           dp[i - 1][j - 1] + cost)
    return dp[n][m]


def _lev(a: str, b: str) -> int:
    ca = np.array([ord(c) for c in a], dtype=np.int32)
    cb = np.array([ord(c) for c in b], dtype=np.int32)
    return int(kernels.levenshtein_codes(ca, cb))


@pytest.mark.parametrize("a,b,d", [
    ("kitten", "sitting", 3),
    ("boston", "bosfon", 1),
    ("", "abc", 3),
    ("abc", "", 3),
    ("", "", 0),
    ("same", "same", 0),
])
def test_levenshtein_known_cases(a, b, d):
    assert _lev(a, b) == d


def test_levenshtein_matches_oracle_on_random_pairs():
    rng = np.random.default_rng(77)
    alphabet = "abcde"
    for _ in range(300):
        a = "".join(rng.choice(list(alphabet), size=rng.integers(0, 10)))
        b = "".join(rng.choice(list(alphabet), size=rng.integers(0, 10)))
        assert _lev(a, b) == _lev_oracle(a, b)


def test_levenshtein_jit_matches_py_func():
    ca = np.array([ord(c) for c in "gumbel"], dtype=np.int32)
    cb = np.array([ord(c) for c in "tumble"], dtype=np.int32)
    assert kernels.levenshtein_codes(ca, cb) == \
        kernels.py_func(kernels.levenshtein_codes)(ca, cb)


def test_warmup_runs():
    kernels.warmup()


def test_numba_flag_reflects_environment(monkeypatch):
    import importlib
    import os

    monkeypatch.setenv("CHARSUB_NO_NUMBA", "1")
    spec = importlib.util.spec_from_file_location(
        "charsub._kernels_probe", kernels.__file__)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    assert mod.NUMBA_ENABLED is False
    # the fallback path is plain python functions
    assert getattr(mod.softmax_rows, "py_func", mod.softmax_rows) is mod.softmax_rows
    x = RNG.normal(0.0, 1.0, (3, 4))
    assert np.allclose(mod.softmax_rows(x), kernels.softmax_rows(x), atol=1e-12)
    assert os.environ["CHARSUB_NO_NUMBA"] == "1"
