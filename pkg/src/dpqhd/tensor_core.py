"""Dense real and integer tensor kernels.

Matrices and vectors are plain ``numpy.ndarray`` objects (float64). The
helpers here validate shapes and finiteness and raise the package's
``DimensionError`` / ``DegenerateInputError`` instead of numpy's generic
errors.

Random numbers
--------------
Gaussian matrices come from a counter-based SplitMix64 stream, so entry k of
the matrix depends only on (seed, k) and is reproducible on any platform::

    state_k = seed + (k + 1) * 0x9E3779B97F4A7C15          (mod 2**64)
    z = state_k
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    u64_k = z ^ (z >> 31)

Consecutive pairs (u64_{2j}, u64_{2j+1}) become uniforms
``u1 = ((u64_{2j} >> 11) + 1) / 2**53`` in (0, 1] and
``u2 = (u64_{2j+1} >> 11) / 2**53`` in [0, 1), and the Box-Muller transform
``sqrt(-2 ln u1) * (cos(2 pi u2), sin(2 pi u2))`` fills entries 2j and 2j+1 of
the row-major matrix.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DegenerateInputError, DimensionError, RangeError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

MIN_BITS, MAX_BITS = 2, 8


def splitmix64(seed, count):
    """The first ``count`` outputs of SplitMix64 seeded with ``seed``."""
    base = np.uint64(int(seed) & _MASK64)
    k = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = base + k * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def derive_seed(root, *labels):
    """Sub-seed for a named consumer of the root seed.

    FNV-1a over the ``/``-joined labels, xored into the root and passed
    through one SplitMix64 step.
    """
    h = 0xCBF29CE484222325
    for byte in "/".join(str(x) for x in labels).encode():
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return int(splitmix64((int(root) & _MASK64) ^ h, 1)[0])


def gen_gaussian_matrix(rows, cols, seed):
    """Standard-normal ``rows x cols`` matrix from the documented stream."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"matrix dimensions must be >= 1, got {rows}x{cols}")
    count = rows * cols
    pairs = (count + 1) // 2
    raw = splitmix64(seed, 2 * pairs)
    scale = 1.0 / 9007199254740992.0  # 2**-53
    u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * scale
    u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * scale
    radius = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = radius * np.cos(theta)
    out[1::2] = radius * np.sin(theta)
    return out[:count].reshape(rows, cols)


def as_matrix(M, name="matrix"):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise RangeError(f"{name} contains non-finite entries")
    return M


def as_vector(v, name="vector"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise RangeError(f"{name} contains non-finite entries")
    return v


def matvec(M, v):
    M = as_matrix(M)
    v = as_vector(v)
    if M.shape[1] != v.shape[0]:
        raise DimensionError(f"cannot multiply {M.shape} matrix by length-{v.shape[0]} vector")
    return M @ v


def cosine(a, b):
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine of a zero-norm vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _complete_orthonormal(U, good):
    """Replace columns of U not flagged ``good`` by an orthonormal completion."""
    n = U.shape[0]
    basis = [U[:, k] for k in range(U.shape[1]) if good[k]]
    fill = []
    for e in np.eye(n):
        if len(basis) + len(fill) == U.shape[1]:
            break
        w = e.copy()
        for _ in range(2):
            for b in basis + fill:
                w -= np.dot(b, w) * b
        nw = np.linalg.norm(w)
        if nw > 1e-8:
            fill.append(w / nw)
    out = U.copy()
    it = iter(fill)
    for k in range(U.shape[1]):
        if not good[k]:
            out[:, k] = next(it)
    return out


def svd(M):
    """Thin SVD ``M = U @ diag(S) @ V`` by QR-preconditioned one-sided Jacobi.

    U is rows x n, S has length n, V is n x cols, with n = min(rows, cols) and
    singular values sorted in nonincreasing order.
    """
    M = as_matrix(M)
    rows, cols = M.shape
    wide = rows <= cols
    Q, R = np.linalg.qr(M.T if wide else M)
    A = R.T if wide else R
    n = A.shape[0]
    at = np.ascontiguousarray(A.T)
    v = np.eye(n)
    sweeps = kernels.jacobi_orthogonalize(at, v, kernels.round_robin_pairs(n))
    if sweeps < 0:
        raise DegenerateInputError("Jacobi SVD did not converge")
    sigma = np.sqrt(np.einsum("ij,ij->i", at, at))
    order = np.argsort(-sigma, kind="stable")
    sigma, at, v = sigma[order], at[order], v[order]
    tiny = (sigma[0] if n else 0.0) * n * np.finfo(np.float64).eps
    good = sigma > tiny
    UA = np.zeros((n, n))
    UA[:, good] = (at[good] / sigma[good, None]).T
    if not good.all():
        UA = _complete_orthonormal(UA, good)
        sigma = np.where(good, sigma, 0.0)
    if wide:
        return UA, sigma, v @ Q.T
    return Q @ UA, sigma, v


def truncated_svd(M, r):
    """Rank-``r`` factors ``(U, S, V)`` with ``U: rows x r`` and ``V: r x cols``."""
    M = as_matrix(M)
    if not 1 <= r <= min(M.shape):
        raise DimensionError(f"rank {r} outside [1, {min(M.shape)}]")
    U, S, V = svd(M)
    return U[:, :r].copy(), S[:r].copy(), V[:r].copy()


def check_bits(bits):
    if not isinstance(bits, (int, np.integer)) or not MIN_BITS <= bits <= MAX_BITS:
        raise ConfigError(f"bitwidth must be an integer in [{MIN_BITS}, {MAX_BITS}], got {bits!r}")
    return int(bits)


@dataclass(frozen=True)
class BitPackedBuffer:
    """``length`` two's-complement integers of ``bits`` each, LSB-first.

    Value i occupies stream bits [i*bits, (i+1)*bits); stream bit k is bit
    ``k % 8`` of byte ``k // 8``.
    """

    bits: int
    length: int
    data: bytes

    def __post_init__(self):
        if len(self.data) != packed_size(self.length, self.bits):
            raise DimensionError(
                f"{len(self.data)} bytes cannot hold exactly {self.length} {self.bits}-bit values")


def packed_size(length, bits):
    return (length * bits + 7) // 8


def pack_bits(values, bits):
    bits = check_bits(bits)
    v = np.asarray(values).reshape(-1)
    if v.size and v.dtype.kind not in "iu":
        raise RangeError("only integer vectors can be bit-packed")
    v = v.astype(np.int64)
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if v.size and (v.min() < lo or v.max() > hi):
        raise RangeError(f"values outside the {bits}-bit range [{lo}, {hi}]")
    return BitPackedBuffer(bits, int(v.size), bytes(kernels.pack_bits(v, bits)))


def unpack_bits(buf):
    raw = np.frombuffer(buf.data, dtype=np.uint8)
    return kernels.unpack_bits(raw, buf.bits, buf.length)


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Per-row symmetric integer tensor: real value = values[i, j] * scales[i]."""

    values: np.ndarray
    scales: np.ndarray
    bits: int

    def __post_init__(self):
        check_bits(self.bits)
        if self.values.ndim != 2 or self.scales.shape != (self.values.shape[0],):
            raise DimensionError("QuantizedTensor needs 2-D values and one scale per row")
        q = (1 << (self.bits - 1))
        if self.values.size and (self.values.min() < -q or self.values.max() > q - 1):
            raise RangeError(f"values outside the {self.bits}-bit range")
        if not (np.all(np.isfinite(self.scales)) and np.all(self.scales > 0)):
            raise RangeError("scales must be finite and strictly positive")

    @property
    def shape(self):
        return self.values.shape

    def dequantize(self):
        return self.values.astype(np.float64) * self.scales[:, None]

    def with_f32_scales(self):
        """Copy whose scales are rounded to the 32-bit storage precision."""
        scales = self.scales.astype(np.float32).astype(np.float64)
        return QuantizedTensor(self.values, scales, self.bits)

    def truncate_cols(self, keep):
        return QuantizedTensor(self.values[:, :keep].copy(), self.scales, self.bits)
