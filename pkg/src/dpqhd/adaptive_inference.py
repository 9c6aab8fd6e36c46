"""Progressive chunked similarity with class elimination and early exit.

Queries are scored in blocks of ``L = ceil(D / C)`` dimensions. Each round
accumulates one block of dot products for the classes still in play, then
drops the two weakest classes while more than half remain, and one
afterwards. Once at most half remain, the query exits early if the top-two
partial cosine gap reaches ``tau``. When the loop stops because two classes
are left, those two are scored over the remaining dimensions before the
final argmax (``complete_survivors``, on by default; switching it off
returns the argmax of the partial cosines). With two or fewer classes no
round runs and the survivors are always scored in full. An early exit
returns the partial argmax without completion. Partial cosines are
normalized by the full query and class norms.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError
from .hdc_core import encode_batches, predict_batch, similarity_operands
from .tensor_core import as_vector


@dataclass(frozen=True)
class AdaptiveConfig:
    tau: float = float("inf")
    elimination_enabled: bool = True
    early_exit_enabled: bool = True
    complete_survivors: bool = True

    def __post_init__(self):
        if not self.tau >= 0:
            raise ConfigError(f"threshold must be >= 0, got {self.tau}")

    @classmethod
    def disabled(cls):
        return cls(float("inf"), False, False)


@dataclass(frozen=True)
class AdaptiveResult:
    classes: np.ndarray
    macs: np.ndarray
    exited_early: np.ndarray


def predict_adaptive_batch(model, H, cfg):
    ops = similarity_operands(model, H)
    cls, macs, exited = kernels.adaptive_batch(
        ops.W, ops.w_scale, ops.w_norm, ops.H, ops.h_scale, ops.h_norm,
        model.chunk, float(cfg.tau), bool(cfg.elimination_enabled),
        bool(cfg.early_exit_enabled), bool(cfg.complete_survivors))
    return AdaptiveResult(cls, macs, exited.astype(bool))


def predict_adaptive(model, h, cfg, trace=None):
    """Classify one hypervector; returns ``(class, macs_used, exited_early)``.

    Pass a list as ``trace`` to receive one record per round with the active
    classes, dimensions consumed, partial cosines and the top-two margin.
    """
    h = as_vector(h, "h")
    if trace is None:
        res = predict_adaptive_batch(model, h[None, :], cfg)
        return int(res.classes[0]), int(res.macs[0]), bool(res.exited_early[0])
    ops = similarity_operands(model, h[None, :])
    cls, macs, exited = kernels.adaptive_one(
        ops.W, ops.w_scale, ops.w_norm, ops.H[0], ops.h_scale[0], ops.h_norm[0],
        model.chunk, float(cfg.tau), cfg.elimination_enabled, cfg.early_exit_enabled,
        cfg.complete_survivors, trace=trace)
    return int(cls), int(macs), bool(exited)


@dataclass(frozen=True)
class OpsReduction:
    reduction_percent: float
    accuracy_adaptive: float
    accuracy_full: float
    macs_mean: float
    macs_p50: float
    macs_p90: float
    early_exit_rate: float

    def as_dict(self):
        return dict(self.__dict__)


def measure_ops_reduction(encoder, model, data, cfg):
    """Similarity MAC savings of adaptive inference over full evaluation."""
    macs, hit_a, hit_f, exits = [], 0, 0, 0
    for start, H in encode_batches(encoder, data.features):
        y = data.labels[start:start + H.shape[0]]
        res = predict_adaptive_batch(model, H, cfg)
        full, _ = predict_batch(model, H)
        hit_a += int(np.sum(res.classes == y))
        hit_f += int(np.sum(full == y))
        exits += int(res.exited_early.sum())
        macs.append(res.macs)
    macs = np.concatenate(macs)
    n = len(data)
    full_total = n * model.num_classes * model.dim
    return OpsReduction(
        reduction_percent=100.0 * (1.0 - macs.sum() / full_total),
        accuracy_adaptive=100.0 * hit_a / n,
        accuracy_full=100.0 * hit_f / n,
        macs_mean=float(macs.mean()),
        macs_p50=float(np.percentile(macs, 50)),
        macs_p90=float(np.percentile(macs, 90)),
        early_exit_rate=exits / n,
    )
