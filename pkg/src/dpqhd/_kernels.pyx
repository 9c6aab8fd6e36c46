# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``dpqhd._fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

ctypedef fused elem_t:
    double
    signed char

cdef double JACOBI_TOL = 1e-15
cdef int JACOBI_MAX_SWEEPS = 60


def jacobi_orthogonalize(double[:, ::1] at, double[:, ::1] v, long long[:, :, ::1] pairs):
    cdef Py_ssize_t m = at.shape[1], nv = v.shape[1]
    cdef Py_ssize_t n_steps = pairs.shape[0], n_pairs = pairs.shape[1]
    cdef Py_ssize_t st, k, j, p, q
    cdef double alpha, beta, gamma, zeta, t, c, s, x, y
    cdef long rotated
    cdef int sweep
    for sweep in range(1, JACOBI_MAX_SWEEPS + 1):
        rotated = 0
        for st in range(n_steps):
            for k in range(n_pairs):
                p = pairs[st, k, 0]
                q = pairs[st, k, 1]
                if p < 0:
                    continue
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for j in range(m):
                    x = at[p, j]
                    y = at[q, j]
                    alpha += x * x
                    beta += y * y
                    gamma += x * y
                if not (fabs(gamma) > JACOBI_TOL * sqrt(alpha * beta)):
                    continue
                rotated += 1
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for j in range(m):
                    x = at[p, j]
                    y = at[q, j]
                    at[p, j] = c * x - s * y
                    at[q, j] = s * x + c * y
                for j in range(nv):
                    x = v[p, j]
                    y = v[q, j]
                    v[p, j] = c * x - s * y
                    v[q, j] = s * x + c * y
        if rotated == 0:
            return sweep
    return -1


def pack_bits(values, int bits):
    cdef cnp.int64_t[::1] v = np.ascontiguousarray(values, dtype=np.int64)
    cdef Py_ssize_t n = v.shape[0]
    out = np.zeros((n * bits + 7) // 8, dtype=np.uint8)
    cdef cnp.uint8_t[::1] buf = out
    cdef unsigned long long mask = (1ULL << bits) - 1
    cdef unsigned long long field
    cdef Py_ssize_t i, pos
    cdef int k
    for i in range(n):
        field = (<unsigned long long> v[i]) & mask
        pos = i * bits
        for k in range(bits):
            if (field >> k) & 1:
                buf[(pos + k) >> 3] |= <cnp.uint8_t> (1 << ((pos + k) & 7))
    return out


def unpack_bits(buf_in, int bits, Py_ssize_t n):
    cdef const cnp.uint8_t[::1] buf = np.ascontiguousarray(buf_in, dtype=np.uint8)
    out = np.empty(n, dtype=np.int8)
    cdef signed char[::1] res = out
    cdef long long field, sign = 1LL << (bits - 1)
    cdef Py_ssize_t i, pos
    cdef int k
    for i in range(n):
        field = 0
        pos = i * bits
        for k in range(bits):
            field |= (<long long> ((buf[(pos + k) >> 3] >> ((pos + k) & 7)) & 1)) << k
        res[i] = <signed char> ((field ^ sign) - sign)
    return out


cdef inline double _chunk_dot(elem_t[:, ::1] W, Py_ssize_t row, elem_t[:, ::1] H,
                              Py_ssize_t n, Py_ssize_t start, Py_ssize_t stop) nogil:
    cdef Py_ssize_t j
    cdef double zd = 0.0
    cdef long long zi = 0
    if elem_t is double:
        for j in range(start, stop):
            zd += W[row, j] * H[n, j]
        return zd
    else:
        for j in range(start, stop):
            zi += (<long long> W[row, j]) * (<long long> H[n, j])
        return <double> zi


def full_scores(elem_t[:, ::1] W, double[::1] w_scale, double[::1] w_norm,
                elem_t[:, ::1] H, double[::1] h_scale, double[::1] h_norm,
                Py_ssize_t chunk):
    cdef Py_ssize_t C = W.shape[0], D = W.shape[1], N = H.shape[0]
    cos_arr = np.empty((N, C), dtype=np.float64)
    cdef double[:, ::1] cos = cos_arr
    cdef Py_ssize_t n, i, start, stop
    cdef double z
    with nogil:
        for n in range(N):
            for i in range(C):
                z = 0.0
                start = 0
                while start < D:
                    stop = start + chunk
                    if stop > D:
                        stop = D
                    z += _chunk_dot(W, i, H, n, start, stop)
                    start = stop
                cos[n, i] = (h_scale[n] * w_scale[i] * z) / (h_norm[n] * w_norm[i])
    return cos_arr, np.full(N, C * D, dtype=np.int64)


cdef inline Py_ssize_t _remove_lowest(Py_ssize_t* active, Py_ssize_t n_active,
                                      double* c) nogil:
    # lowest cosine goes; on equal cosine the higher class index goes first
    cdef Py_ssize_t k, pick = 0
    for k in range(1, n_active):
        if c[active[k]] < c[active[pick]] or (
                c[active[k]] == c[active[pick]] and active[k] > active[pick]):
            pick = k
    for k in range(pick, n_active - 1):
        active[k] = active[k + 1]
    return n_active - 1


cdef inline double _margin(Py_ssize_t* active, Py_ssize_t n_active, double* c) nogil:
    cdef Py_ssize_t k, a = 0, b = -1
    for k in range(1, n_active):
        if c[active[k]] > c[active[a]] or (
                c[active[k]] == c[active[a]] and active[k] < active[a]):
            a = k
    for k in range(n_active):
        if k == a:
            continue
        if b < 0 or c[active[k]] > c[active[b]] or (
                c[active[k]] == c[active[b]] and active[k] < active[b]):
            b = k
    return c[active[a]] - c[active[b]]


def adaptive_batch(elem_t[:, ::1] W, double[::1] w_scale, double[::1] w_norm,
                   elem_t[:, ::1] H, double[::1] h_scale, double[::1] h_norm,
                   Py_ssize_t chunk, double tau, bint eliminate, bint early_exit,
                   bint complete):
    cdef Py_ssize_t C = W.shape[0], D = W.shape[1], N = H.shape[0]
    cls_arr = np.empty(N, dtype=np.int64)
    macs_arr = np.empty(N, dtype=np.int64)
    exit_arr = np.zeros(N, dtype=np.uint8)
    cdef cnp.int64_t[::1] cls = cls_arr
    cdef cnp.int64_t[::1] macs = macs_arr
    cdef cnp.uint8_t[::1] exited = exit_arr
    z_arr = np.empty(C, dtype=np.float64)
    c_arr = np.empty(C, dtype=np.float64)
    act_arr = np.empty(C, dtype=np.intp)
    cdef double[::1] z = z_arr
    cdef double[::1] c = c_arr
    cdef Py_ssize_t[::1] active = act_arr
    cdef Py_ssize_t n, i, k, n_active, d, stop, best, n_remove, rounds
    cdef long long used
    cdef double half = C / 2.0
    cdef bint done
    with nogil:
        for n in range(N):
            for i in range(C):
                z[i] = 0.0
                c[i] = 0.0
                active[i] = i
            n_active = C
            d = 0
            used = 0
            done = False
            rounds = 0
            while n_active > 2 and d < D:
                stop = d + chunk
                if stop > D:
                    stop = D
                for k in range(n_active):
                    i = active[k]
                    z[i] += _chunk_dot(W, i, H, n, d, stop)
                    c[i] = (h_scale[n] * w_scale[i] * z[i]) / (h_norm[n] * w_norm[i])
                used += n_active * (stop - d)
                d = stop
                rounds += 1
                if eliminate:
                    if n_active > half:
                        n_remove = 2
                        if n_active - 2 < n_remove:
                            n_remove = n_active - 2
                        for k in range(n_remove):
                            n_active = _remove_lowest(&active[0], n_active, &c[0])
                    else:
                        n_active = _remove_lowest(&active[0], n_active, &c[0])
                        if early_exit and n_active <= half and \
                                _margin(&active[0], n_active, &c[0]) >= tau:
                            done = True
                            break
            if not done and (complete or rounds == 0):
                while d < D:
                    stop = d + chunk
                    if stop > D:
                        stop = D
                    for k in range(n_active):
                        i = active[k]
                        z[i] += _chunk_dot(W, i, H, n, d, stop)
                        c[i] = (h_scale[n] * w_scale[i] * z[i]) / (h_norm[n] * w_norm[i])
                    used += n_active * (stop - d)
                    d = stop
            best = active[0]
            for k in range(1, n_active):
                i = active[k]
                if c[i] > c[best] or (c[i] == c[best] and i < best):
                    best = i
            cls[n] = best
            macs[n] = used
            exited[n] = 1 if done else 0
    return cls_arr, macs_arr, exit_arr
