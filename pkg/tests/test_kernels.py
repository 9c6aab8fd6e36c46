"""Every kernel backend agrees with the others and with direct NumPy oracles."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpqhd import _fallback, kernels

BACKENDS = kernels.backends()


def test_backend_selection():
    assert kernels.BACKEND in BACKENDS
    assert "python" in BACKENDS


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("bits", range(2, 9))
def test_pack_matches_numpy_oracle(name, bits, rng):
    impl = BACKENDS[name]
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    v = rng.integers(lo, hi + 1, 1001)
    buf = np.asarray(impl.pack_bits(v, bits), dtype=np.uint8)
    stream = "".join(format(int(x) & ((1 << bits) - 1), f"0{bits}b")[::-1] for x in v)
    stream += "0" * (-len(stream) % 8)
    want = bytes(int(stream[i:i + 8][::-1], 2) for i in range(0, len(stream), 8))
    assert bytes(buf) == want
    assert impl.unpack_bits(buf, bits, len(v)).tolist() == v.tolist()


@pytest.mark.parametrize("n", [1, 2, 3, 8, 17])
def test_round_robin_covers_all_pairs(n):
    pairs = _fallback.round_robin_pairs(n)
    seen = set()
    for step in pairs:
        used = [i for p in step if p[0] >= 0 for i in p]
        assert len(used) == len(set(used))
        seen.update(tuple(p) for p in step if p[0] >= 0)
    assert seen == {(i, j) for i in range(n) for j in range(i + 1, n)}


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_jacobi_orthogonalizes(name, rng):
    A = rng.standard_normal((9, 9))
    at, v = np.ascontiguousarray(A.T), np.eye(9)
    sweeps = BACKENDS[name].jacobi_orthogonalize(at, v, _fallback.round_robin_pairs(9))
    assert 0 < sweeps < 60
    G = at @ at.T
    assert np.allclose(G - np.diag(np.diag(G)), 0, atol=1e-10)
    assert np.allclose(v.T @ at, A.T, atol=1e-10)
    assert np.allclose(np.sort(np.sqrt(np.diag(G))), np.sort(np.linalg.svd(A, compute_uv=False)))


def _operands(rng, C, D, N, quantized):
    if quantized:
        W = rng.integers(-7, 8, (C, D)).astype(np.int8)
        H = rng.integers(-127, 128, (N, D)).astype(np.int8)
        w_scale, h_scale = rng.uniform(0.1, 1, C), rng.uniform(0.1, 1, N)
    else:
        W, H = rng.standard_normal((C, D)), rng.standard_normal((N, D))
        w_scale, h_scale = np.ones(C), np.ones(N)
    w_norm = np.linalg.norm(W.astype(float) * w_scale[:, None], axis=1)
    h_norm = np.linalg.norm(H.astype(float) * h_scale[:, None], axis=1)
    return W, w_scale, w_norm, H, h_scale, h_norm


@pytest.mark.parametrize("quantized", [False, True])
def test_full_scores_agree(quantized, rng):
    ops = _operands(rng, 7, 333, 40, quantized)
    chunk = math.ceil(333 / 7)
    W, ws, wn, H, hs, hn = ops
    oracle = (hs[:, None] * ws[None, :] * (H.astype(float) @ W.astype(float).T)) / \
        (hn[:, None] * wn[None, :])
    for impl in BACKENDS.values():
        cos, macs = impl.full_scores(*ops, chunk)
        assert np.allclose(cos, oracle, atol=1e-12)
        assert np.all(macs == 7 * 333)


@given(st.integers(2, 20), st.integers(1, 50), st.booleans(), st.integers(0, 2**32),
       st.sampled_from([0.0, 0.05, 0.2, math.inf]), st.booleans(), st.booleans(),
       st.booleans())
def test_adaptive_backends_agree(C, per_class, quantized, seed, tau, elim, exit_, complete):
    rng = np.random.default_rng(seed)
    D = C * per_class + int(rng.integers(0, C))
    ops = _operands(rng, C, D, 6, quantized)
    chunk = math.ceil(D / C)
    results = [impl.adaptive_batch(*ops, chunk, tau, elim, exit_, complete)
               for impl in BACKENDS.values()]
    for other in results[1:]:
        for a, b in zip(results[0], other):
            assert np.array_equal(a, b)
    if quantized:
        # integer dots are exact, so the scalar single-query path agrees too
        W, ws, wn, H, hs, hn = ops
        for n in range(H.shape[0]):
            one = _fallback.adaptive_one(W, ws, wn, H[n], hs[n], hn[n], chunk, tau, elim,
                                         exit_, complete)
            assert one == (results[0][0][n], results[0][1][n], bool(results[0][2][n]))
