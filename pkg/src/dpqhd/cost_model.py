"""Exact byte and MAC accounting for encoder/model pairs.

Dense real tensors count 4 bytes per entry (float32 storage). A quantized
tensor counts ``ceil(rows * cols * bits / 8)`` packed bytes plus a 4-byte
scale per row. These are exactly the payload sizes written by
``dpqhd.container``.

Wall-clock time and energy on a microcontroller are not modeled; the MAC
ratio from ``speedup_proxy`` stands in for the runtime comparison.
"""

from dataclasses import asdict, dataclass

from .tensor_core import QuantizedTensor, packed_size

FLOAT_BYTES = 4
SCALE_BYTES = 4


def tensor_bytes(t):
    """(payload bytes, scale bytes) of one stored tensor."""
    rows, cols = t.shape
    if isinstance(t, QuantizedTensor):
        return packed_size(rows * cols, t.bits), SCALE_BYTES * rows
    return FLOAT_BYTES * rows * cols, 0


@dataclass(frozen=True)
class CostReport:
    encoder_bytes: int
    model_bytes: int
    scale_bytes: int
    total_bytes: int
    encode_macs: int
    similarity_macs_full: int
    reduction_vs_baseline: float
    baseline_features: int
    baseline_dim: int
    baseline_classes: int
    baseline_bytes: int

    def as_dict(self):
        return asdict(self)

    def table(self):
        rows = [
            ("encoder bytes", f"{self.encoder_bytes:,}"),
            ("model bytes", f"{self.model_bytes:,}"),
            ("scale bytes", f"{self.scale_bytes:,}"),
            ("total bytes", f"{self.total_bytes:,}"),
            ("encode MACs", f"{self.encode_macs:,}"),
            ("similarity MACs (full)", f"{self.similarity_macs_full:,}"),
            ("memory reduction", f"{self.reduction_vs_baseline:.2f}x"),
            ("baseline", f"F={self.baseline_features} D={self.baseline_dim} "
                         f"C={self.baseline_classes} float32"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def baseline_bytes(features, dim, classes):
    """Uncompressed float32 projection plus float32 model."""
    return FLOAT_BYTES * (features * dim + classes * dim)


def account(encoder, model, baseline_dim=None):
    """Cost of an encoder/model pair.

    ``baseline_dim`` is the hypervector dimension of the uncompressed
    reference (defaults to the full encoder's own dimension, or to the
    model dimension).
    """
    if hasattr(encoder, "P"):
        enc_tensors = [encoder.P]
    else:
        enc_tensors = [encoder.P1, encoder.P2]
    enc_payload = enc_scales = 0
    for t in enc_tensors:
        p, s = tensor_bytes(t)
        enc_payload += p
        enc_scales += s
    mdl_payload, mdl_scales = tensor_bytes(model.class_hvs)
    total = enc_payload + enc_scales + mdl_payload + mdl_scales
    F, C = encoder.input_dim, model.num_classes
    D0 = baseline_dim if baseline_dim is not None else model.dim
    base = baseline_bytes(F, D0, C)
    return CostReport(
        encoder_bytes=enc_payload,
        model_bytes=mdl_payload,
        scale_bytes=enc_scales + mdl_scales,
        total_bytes=total,
        encode_macs=encoder.encode_macs,
        similarity_macs_full=C * model.dim,
        reduction_vs_baseline=base / total,
        baseline_features=F,
        baseline_dim=D0,
        baseline_classes=C,
        baseline_bytes=base,
    )


def account_artifacts(artifacts, baseline_dim):
    return account(artifacts.encoder, artifacts.model, baseline_dim)


def speedup_proxy(baseline, compressed, adaptive_macs_mean=None):
    """Ratio of total MACs per query, baseline over compressed.

    ``adaptive_macs_mean`` replaces the compressed model's full similarity
    cost when adaptive inference is used.
    """
    sim = compressed.similarity_macs_full if adaptive_macs_mean is None else adaptive_macs_mean
    return (baseline.encode_macs + baseline.similarity_macs_full) / (compressed.encode_macs + sim)
