"""Decomposition, pruning and quantization of an encoder/model pair.

The stages always run in the order decompose -> prune -> quantize. Each
stage's calibration accuracy, memory and MAC count are recorded in
``PipelineArtifacts.provenance``.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import cost_model
from .errors import ConfigError, DimensionError, UsageError
from .hdc_core import (
    DecomposedEncoder,
    FullEncoder,
    HdcModel,
    accuracy,
    train_centroid,
)
from .tensor_core import (
    QuantizedTensor,
    as_matrix,
    as_vector,
    check_bits,
    derive_seed,
    gen_gaussian_matrix,
    truncated_svd,
)

SVD_APPROX = "svd"
FRESH_RANDOM = "random"
MODES = (SVD_APPROX, FRESH_RANDOM)

# k/10 for k = 1..10, i.e. 0.1s, 0.2s, ..., 0.9s, 1.0s
SCALE_GRID = np.arange(1, 11) / 10.0

_ROW_BLOCK = 64


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_mse(T, bits):
    """Per-row symmetric quantization with an MSE-searched scale.

    For each row the base scale is ``max|row| / (2**(bits-1) - 1)``; ten
    fractions of it are tried and the one with the smallest reconstruction
    MSE wins (the earliest on ties). Values are clipped to
    ``[-(2**(bits-1) - 1), 2**(bits-1) - 1]``. An all-zero row gets scale 1.0
    and zero values. A 1-D input is treated as a single row.
    """
    bits = check_bits(bits)
    T = np.asarray(T, dtype=np.float64)
    if T.ndim == 1:
        T = T[None, :]
    T = as_matrix(T, "tensor")
    qmax = (1 << (bits - 1)) - 1
    rows = T.shape[0]
    values = np.zeros(T.shape, dtype=np.int8)
    scales = np.ones(rows)
    for lo in range(0, rows, _ROW_BLOCK):
        block = T[lo:lo + _ROW_BLOCK]
        tmax = np.abs(block).max(axis=1) if block.shape[1] else np.zeros(block.shape[0])
        live = tmax > 0
        if not live.any():
            continue
        blk = block[live]
        cand = (tmax[live] / qmax)[:, None] * SCALE_GRID[None, :]          # (R, 10)
        q = np.clip(round_half_away(blk[:, None, :] / cand[:, :, None]), -qmax, qmax)
        mse = np.mean((q * cand[:, :, None] - blk[:, None, :]) ** 2, axis=2)
        best = np.argmin(mse, axis=1)
        pick = np.arange(blk.shape[0])
        idx = np.flatnonzero(live) + lo
        values[idx] = q[pick, best].astype(np.int8)
        scales[idx] = cand[pick, best]
    return QuantizedTensor(values, scales, bits)


@dataclass(frozen=True)
class CompressionConfig:
    rank: int
    prune_ratio: float = 0.0
    bits: int = 8
    mode: str = SVD_APPROX
    quantize_p1: bool = True
    quantize_p2: bool = True
    quantize_model: bool = True
    activation_bits: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if not 0.0 <= self.prune_ratio < 1.0:
            raise ConfigError(f"prune ratio must lie in [0, 1), got {self.prune_ratio}")
        if self.mode not in MODES:
            raise ConfigError(f"decomposition mode must be one of {MODES}, got {self.mode!r}")
        check_bits(self.bits)
        check_bits(self.activation_bits)

    @property
    def quantizes_anything(self):
        return self.quantize_p1 or self.quantize_p2 or self.quantize_model


@dataclass(frozen=True)
class StageRecord:
    stage: str
    accuracy: float
    total_bytes: int
    macs: int

    def as_dict(self):
        return {"stage": self.stage, "accuracy": self.accuracy,
                "total_bytes": self.total_bytes, "macs": self.macs}


@dataclass(frozen=True, eq=False)
class PipelineArtifacts:
    encoder: DecomposedEncoder
    model: HdcModel
    config: CompressionConfig
    provenance: List[StageRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.encoder.output_dim != self.model.dim:
            raise DimensionError("encoder output and model dimension differ")


def pruned_dim(dim, prune_ratio):
    return int(np.floor(dim * (1.0 - prune_ratio) + 0.5))


def decompose_encoder(encoder, rank, mode=SVD_APPROX, seed=0, train=None, factors=None):
    """Replace a full projection by a rank-``rank`` factor pair.

    ``svd`` keeps the existing model valid and needs no data. ``random``
    draws fresh Gaussian factors, so it rebuilds the model with one
    aggregation pass over ``train`` and returns it. ``factors`` may carry a
    precomputed ``(U, S, V)`` of at least the requested rank.
    """
    if not isinstance(encoder, FullEncoder):
        raise UsageError("only a full encoder can be decomposed")
    F, D = encoder.P.shape
    if not 1 <= rank <= min(F, D):
        raise DimensionError(f"rank {rank} outside [1, {min(F, D)}]")
    if mode == SVD_APPROX:
        U, S, V = factors if factors is not None else truncated_svd(encoder.P, rank)
        if U.shape[1] < rank:
            raise DimensionError("precomputed factors have too small a rank")
        return DecomposedEncoder(U[:, :rank] * S[:rank], V[:rank].copy()), None
    if mode == FRESH_RANDOM:
        if train is None:
            raise UsageError("random decomposition rebuilds the model and needs training data")
        dec = DecomposedEncoder(
            gen_gaussian_matrix(F, rank, derive_seed(seed, "decompose", "P1")),
            gen_gaussian_matrix(rank, D, derive_seed(seed, "decompose", "P2")),
        )
        return dec, train_centroid(dec, train)
    raise ConfigError(f"unknown decomposition mode {mode!r}")


def prune(encoder, model, prune_ratio):
    """Drop the trailing dimensions of the encoder output and the model."""
    if not 0.0 <= prune_ratio < 1.0:
        raise ConfigError(f"prune ratio must lie in [0, 1), got {prune_ratio}")
    if encoder.output_dim != model.dim:
        raise DimensionError("encoder output and model dimension differ")
    if prune_ratio == 0.0:
        return encoder, model
    keep = pruned_dim(model.dim, prune_ratio)
    if keep < model.num_classes:
        raise ConfigError(
            f"pruning to {keep} dimensions leaves fewer than {model.num_classes} (one per class)")

    def cut(t):
        return t.truncate_cols(keep) if isinstance(t, QuantizedTensor) else t[:, :keep].copy()

    if isinstance(encoder, FullEncoder):
        enc = FullEncoder(encoder.P[:, :keep].copy())
    else:
        enc = DecomposedEncoder(encoder.P1, cut(encoder.P2))
    return enc, HdcModel(cut(model.class_hvs), model.activation_bits)


def quantize_pair(encoder, model, cfg):
    """Quantize the tensors selected in ``cfg``; scales end at float32 precision."""

    def q(t, on):
        return quantize_mse(t, cfg.bits).with_f32_scales() if on else t

    enc = DecomposedEncoder(q(encoder.P1, cfg.quantize_p1), q(encoder.P2, cfg.quantize_p2))
    if cfg.quantize_model:
        mdl = HdcModel(q(model.class_hvs, True), cfg.activation_bits)
    else:
        mdl = HdcModel(model.class_hvs)
    return enc, mdl


def _record(stage, encoder, model, calib):
    report = cost_model.account(encoder, model)
    return StageRecord(stage, accuracy(encoder, model, calib), report.total_bytes,
                       report.encode_macs + report.similarity_macs_full)


def run_pipeline(encoder, model, cfg, calib, train=None, factors=None):
    """Decompose, prune, then quantize; log calibration accuracy per stage."""
    if len(calib) == 0:
        raise UsageError("calibration set is empty")
    keep = pruned_dim(model.dim, cfg.prune_ratio)
    if keep < model.num_classes:
        raise ConfigError(f"pruned dimension {keep} is below the class count {model.num_classes}")
    enc, new_model = decompose_encoder(encoder, cfg.rank, cfg.mode, cfg.seed, train, factors)
    mdl = new_model if new_model is not None else model
    log = [_record("D", enc, mdl, calib)]
    enc, mdl = prune(enc, mdl, cfg.prune_ratio)
    log.append(_record("P", enc, mdl, calib))
    enc, mdl = quantize_pair(enc, mdl, cfg)
    log.append(_record("Q", enc, mdl, calib))
    return PipelineArtifacts(enc, mdl, cfg, log)


def error_bound_check(x, prune_keep, bits):
    """Norms of the prune-then-quantize error and of the separate errors.

    Returns ``(|x - q(s(x))|, |x - q(x)| + |x - s(x)|)`` where ``s`` zeroes
    every coordinate from ``prune_keep`` on and ``q`` is ``quantize_mse`` on
    the vector as one channel.
    """
    x = as_vector(x, "x")
    if not 1 <= prune_keep <= x.shape[0]:
        raise DimensionError(f"prune_keep must lie in [1, {x.shape[0]}]")
    sx = x.copy()
    sx[prune_keep:] = 0.0
    q_sx = quantize_mse(sx, bits).dequantize()[0]
    q_x = quantize_mse(x, bits).dequantize()[0]
    lhs = float(np.linalg.norm(x - q_sx))
    rhs = float(np.linalg.norm(x - q_x) + np.linalg.norm(x - sx))
    return lhs, rhs
