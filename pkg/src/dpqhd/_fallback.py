"""Pure NumPy implementations of the hot kernels.

Every function here has a twin with an identical signature in the compiled
``_kernels`` module. Results agree exactly for integer work (bit packing,
quantized similarity) and up to floating-point summation order elsewhere.
"""

import numpy as np

JACOBI_TOL = 1e-15
JACOBI_MAX_SWEEPS = 60


def round_robin_pairs(n):
    """Tournament ordering of the n*(n-1)/2 index pairs.

    Returns an int64 array of shape (steps, n_pad // 2, 2). Pairs within a
    step are disjoint; pairs involving the padding index (n, when n is odd)
    are marked -1 and skipped.
    """
    n_pad = n + (n % 2)
    players = list(range(n_pad))
    steps = []
    for _ in range(n_pad - 1):
        step = []
        for i in range(n_pad // 2):
            p, q = players[i], players[n_pad - 1 - i]
            if p >= n or q >= n:
                step.append((-1, -1))
            else:
                step.append((min(p, q), max(p, q)))
        steps.append(step)
        players = [players[0], players[-1]] + players[1:-1]
    return np.asarray(steps, dtype=np.int64).reshape(n_pad - 1, n_pad // 2, 2)


def jacobi_orthogonalize(at, v, pairs):
    """One-sided (Hestenes) Jacobi on the rows of ``at``, in place.

    Rows of ``at`` are the columns of the matrix being orthogonalized; the
    same rotations are applied to the rows of ``v``. Returns the number of
    sweeps performed, or -1 if the sweep limit was hit.
    """
    for sweep in range(1, JACOBI_MAX_SWEEPS + 1):
        rotated = 0
        for step in pairs:
            step = step[step[:, 0] >= 0]
            if step.size == 0:
                continue
            p, q = step[:, 0], step[:, 1]
            ap, aq = at[p], at[q]
            alpha = np.einsum("ij,ij->i", ap, ap)
            beta = np.einsum("ij,ij->i", aq, aq)
            gamma = np.einsum("ij,ij->i", ap, aq)
            active = np.abs(gamma) > JACOBI_TOL * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated += int(active.sum())
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            sign = np.where(zeta >= 0.0, 1.0, -1.0)
            t = sign / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c, s = c[:, None], s[:, None]
            ap, aq = at[p], at[q]
            at[p] = c * ap - s * aq
            at[q] = s * ap + c * aq
            vp, vq = v[p], v[q]
            v[p] = c * vp - s * vq
            v[q] = s * vp + c * vq
        if rotated == 0:
            return sweep
    return -1


def pack_bits(values, bits):
    """Pack signed integers into a little-endian bit stream of ``bits`` per value."""
    v = np.asarray(values, dtype=np.int64)
    mask = (1 << bits) - 1
    fields = (v & mask).astype(np.uint8)
    planes = (fields[:, None] >> np.arange(bits, dtype=np.uint8)) & 1
    return np.packbits(planes.reshape(-1), bitorder="little")


def unpack_bits(buf, bits, n):
    stream = np.unpackbits(np.asarray(buf, dtype=np.uint8), bitorder="little")
    planes = stream[: n * bits].reshape(n, bits).astype(np.int64)
    fields = planes @ (np.int64(1) << np.arange(bits, dtype=np.int64))
    sign = np.int64(1) << (bits - 1)
    return ((fields ^ sign) - sign).astype(np.int8)


def _chunk_dot(w_row, h, start, stop):
    return np.dot(w_row[start:stop], h[start:stop])


def _acc_dtype(W):
    return np.int64 if W.dtype.kind == "i" else np.float64


def full_scores(W, w_scale, w_norm, H, h_scale, h_norm, chunk):
    """Chunk-accumulated cosine similarity of each query against every class.

    Returns (cosines float64[N, C], macs int64[N]).
    """
    C, D = W.shape
    N = H.shape[0]
    acc = _acc_dtype(W)
    Wa = W.astype(acc)
    Ha = H.astype(acc)
    cos = np.empty((N, C), dtype=np.float64)
    for n in range(N):
        h = Ha[n]
        for i in range(C):
            z = 0.0
            for start in range(0, D, chunk):
                z += float(_chunk_dot(Wa[i], h, start, min(start + chunk, D)))
            cos[n, i] = (h_scale[n] * w_scale[i] * z) / (h_norm[n] * w_norm[i])
    return cos, np.full(N, C * D, dtype=np.int64)


def _lowest(active, c, k):
    # ascending cosine; on equal cosine the higher class index goes first
    order = sorted(active, key=lambda i: (c[i], -i))
    return order[:k]


def _top_two(active, c):
    order = sorted(active, key=lambda i: (-c[i], i))
    return order[0], order[1]


def adaptive_one(w, w_scale, w_norm, h, h_scale, h_norm, chunk, tau,
                 eliminate, early_exit, complete, trace=None):
    """Progressive chunked similarity with class elimination and early exit.

    ``w``/``h`` hold either real values or unpacked integers (then the dot
    products are exact integer sums). When the loop stops with two classes
    left and ``complete`` is set, both are scored over the remaining
    dimensions; if no round ran at all (C <= 2) they always are.
    Returns (class, macs, exited).
    """
    C, D = w.shape
    acc = _acc_dtype(w)
    w = w.astype(acc, copy=False)
    h = h.astype(acc, copy=False)
    active = list(range(C))
    z = [0.0] * C
    c = [0.0] * C
    d = 0
    macs = 0
    half = C / 2.0
    exited = False
    rnd = 0
    denom_scale = [h_scale * w_scale[i] for i in range(C)]
    while len(active) > 2 and d < D:
        stop = min(d + chunk, D)
        for i in active:
            z[i] += float(_chunk_dot(w[i], h, d, stop))
            c[i] = (denom_scale[i] * z[i]) / (h_norm * w_norm[i])
        macs += len(active) * (stop - d)
        d = stop
        rnd += 1
        margin = None
        if eliminate:
            if len(active) > half:
                for i in _lowest(active, c, min(2, len(active) - 2)):
                    active.remove(i)
            else:
                for i in _lowest(active, c, 1):
                    active.remove(i)
                a, b = _top_two(active, c)
                margin = c[a] - c[b]
                if early_exit and len(active) <= half and margin >= tau:
                    exited = True
        if trace is not None:
            trace.append({
                "round": rnd,
                "active": list(active),
                "dims": d,
                "cosines": {i: c[i] for i in active},
                "margin": margin,
                "exited_early": exited,
            })
        if exited:
            break
    if not exited and (complete or rnd == 0):
        while d < D:
            stop = min(d + chunk, D)
            for i in active:
                z[i] += float(_chunk_dot(w[i], h, d, stop))
                c[i] = (denom_scale[i] * z[i]) / (h_norm * w_norm[i])
            macs += len(active) * (stop - d)
            d = stop
    best = sorted(active, key=lambda i: (-c[i], i))[0]
    return best, macs, exited


def adaptive_batch(W, w_scale, w_norm, H, h_scale, h_norm, chunk, tau,
                   eliminate, early_exit, complete):
    N = H.shape[0]
    acc = _acc_dtype(W)
    W = W.astype(acc, copy=False)
    H = H.astype(acc, copy=False)
    cls = np.empty(N, dtype=np.int64)
    macs = np.empty(N, dtype=np.int64)
    exited = np.zeros(N, dtype=np.uint8)
    for n in range(N):
        cls[n], macs[n], exited[n] = adaptive_one(
            W, w_scale, w_norm, H[n], h_scale[n], h_norm[n], chunk, tau,
            eliminate, early_exit, complete)
    return cls, macs, exited
