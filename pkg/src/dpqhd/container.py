"""Binary container for an encoder, its model and the input normalization.

All integers and floats are little-endian.

Header::

    offset  size  field
    0       4     magic b"DPQH"
    4       2     format version (u16, currently 1)
    6       4     header length in bytes, i.e. payload offset (u32)
    10      4     F, input features (u32)
    14      4     r, rank; 0 for a full encoder (u32)
    18      4     D, encoder output / model dimension (u32)
    22      4     C, classes (u32)
    26      4     uncompressed reference dimension (u32)
    30      1     encoder variant: 0 full, 1 decomposed
    31      1     tag of P (full) or P1: 0 float32, else bitwidth 2..8
    32      1     tag of P2 (0 when full)
    33      1     tag of the class hypervectors
    34      1     activation bitwidth, 0 for float models
    35      8     early-exit threshold (f64, NaN when unset)
    43      4F    feature means (f32)
    43+4F   4F    feature standard deviations (f32)

Payload, tensor by tensor (P or P1, P2, then class hypervectors), row-major:
a float32 tensor is ``rows*cols`` f32 values; a quantized tensor is its
bit-packed values (``ceil(rows*cols*bits/8)`` bytes, see
``tensor_core.BitPackedBuffer``) followed by ``rows`` f32 scales.

Real values are stored at float32 precision, so a loaded artifact holds the
float32-rounded values and saving it again reproduces the file byte for byte.
"""

import math
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParseError
from .hdc_core import DecomposedEncoder, FullEncoder, HdcModel, Normalizer
from .tensor_core import QuantizedTensor, pack_bits, packed_size, unpack_bits, BitPackedBuffer

MAGIC = b"DPQH"
VERSION = 1
_FIXED = struct.Struct("<4sHIIIIIIBBBBBd")


@dataclass(frozen=True, eq=False)
class Artifact:
    encoder: object
    model: HdcModel
    normalizer: Normalizer
    baseline_dim: int
    threshold: Optional[float] = None


@dataclass(frozen=True)
class Header:
    version: int
    header_len: int
    features: int
    rank: int
    dim: int
    classes: int
    baseline_dim: int
    variant: int
    tags: tuple
    activation_bits: int
    threshold: Optional[float]


def _tag(t):
    return t.bits if isinstance(t, QuantizedTensor) else 0


def _tensor_bytes(t):
    if isinstance(t, QuantizedTensor):
        buf = pack_bits(t.values.reshape(-1), t.bits)
        return buf.data + t.scales.astype("<f4").tobytes()
    return np.ascontiguousarray(t, dtype="<f4").tobytes()


def to_bytes(art):
    enc, mdl, norm = art.encoder, art.model, art.normalizer
    if isinstance(enc, FullEncoder):
        variant, rank, tensors = 0, 0, [enc.P]
        tags = (_tag(enc.P), 0)
    else:
        variant, rank, tensors = 1, enc.rank, [enc.P1, enc.P2]
        tags = (_tag(enc.P1), _tag(enc.P2))
    tensors.append(mdl.class_hvs)
    F = enc.input_dim
    header_len = _FIXED.size + 8 * F
    thr = math.nan if art.threshold is None else float(art.threshold)
    head = _FIXED.pack(MAGIC, VERSION, header_len, F, rank, mdl.dim, mdl.num_classes,
                       art.baseline_dim, variant, tags[0], tags[1], _tag(mdl.class_hvs),
                       mdl.activation_bits or 0, thr)
    parts = [head, norm.mean.astype("<f4").tobytes(), norm.std.astype("<f4").tobytes()]
    parts.extend(_tensor_bytes(t) for t in tensors)
    return b"".join(parts)


def save(path, art):
    """Write atomically: a temporary file in the same directory, then rename."""
    data = to_bytes(art)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".dpqh")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_header(data):
    if len(data) < _FIXED.size:
        raise ParseError(f"truncated header: {len(data)} bytes, need {_FIXED.size} at offset 0")
    (magic, version, header_len, F, rank, dim, classes, base, variant,
     t0, t1, t2, abits, thr) = _FIXED.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise ParseError(f"unsupported format version {version} at offset 4")
    if header_len != _FIXED.size + 8 * F:
        raise ParseError(f"header length {header_len} at offset 6 inconsistent with F={F}")
    if variant not in (0, 1):
        raise ParseError(f"unknown encoder variant {variant} at offset 30")
    return Header(version, header_len, F, rank, dim, classes, base, variant,
                  (t0, t1, t2), abits, None if math.isnan(thr) else thr)


def read_header(path):
    with open(path, "rb") as fh:
        return parse_header(fh.read(_FIXED.size))


class _Reader:
    def __init__(self, data, offset):
        self.data = data
        self.offset = offset

    def take(self, n, what):
        if self.offset + n > len(self.data):
            raise ParseError(f"truncated {what}: need {n} bytes at offset {self.offset}, "
                             f"file has {len(self.data)}")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def tensor(self, rows, cols, tag, what):
        if tag == 0:
            raw = self.take(4 * rows * cols, what)
            return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(rows, cols)
        if not 2 <= tag <= 8:
            raise ParseError(f"invalid bitwidth tag {tag} for {what}")
        packed = self.take(packed_size(rows * cols, tag), what)
        scales = np.frombuffer(self.take(4 * rows, what + " scales"), dtype="<f4")
        values = unpack_bits(BitPackedBuffer(tag, rows * cols, packed)).reshape(rows, cols)
        return QuantizedTensor(values, scales.astype(np.float64), tag)


def from_bytes(data):
    h = parse_header(data)
    rd = _Reader(data, _FIXED.size)
    F = h.features
    mean = np.frombuffer(rd.take(4 * F, "feature means"), dtype="<f4").astype(np.float64)
    std = np.frombuffer(rd.take(4 * F, "feature stds"), dtype="<f4").astype(np.float64)
    if h.variant == 0:
        enc = FullEncoder(rd.tensor(F, h.dim, h.tags[0], "projection"))
    else:
        enc = DecomposedEncoder(rd.tensor(F, h.rank, h.tags[0], "first factor"),
                                rd.tensor(h.rank, h.dim, h.tags[1], "second factor"))
    W = rd.tensor(h.classes, h.dim, h.tags[2], "class hypervectors")
    if rd.offset != len(data):
        raise ParseError(f"{len(data) - rd.offset} trailing bytes at offset {rd.offset}")
    model = HdcModel(W, h.activation_bits or None)
    return Artifact(enc, model, Normalizer(mean, std), h.baseline_dim, h.threshold)


def load(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def payload_size(path):
    """File size minus the header: what the cost model must account for."""
    return os.path.getsize(path) - read_header(path).header_len
