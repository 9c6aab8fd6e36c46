"""Choosing the rank, the prune ratio and the early-exit threshold.

Every candidate is scored on ``num_subsets`` disjoint, class-stratified
subsets of ``subset_size`` samples and summarized by mean and standard
deviation of accuracy (in percentage points). The smallest rank within
``accuracy_tolerance`` of the best candidate is kept, then the largest prune
ratio within the tolerance of the unpruned decomposed encoder.
"""

from dataclasses import asdict, dataclass, field
from typing import List, Sequence

import numpy as np

from .compression import SVD_APPROX, decompose_encoder, prune, pruned_dim
from .errors import ConfigError
from .hdc_core import accuracy, encode_all, predict_batch
from .tensor_core import derive_seed, truncated_svd


@dataclass(frozen=True)
class CalibrationPlan:
    rank_grid: Sequence[int] = (64, 128, 256, 512)
    prune_grid: Sequence[float] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    subset_size: int = 128
    num_subsets: int = 5
    accuracy_tolerance: float = 1.0
    mode: str = SVD_APPROX
    seed: int = 0

    def __post_init__(self):
        for name in ("rank_grid", "prune_grid"):
            grid = list(getattr(self, name))
            if not grid:
                raise ConfigError(f"{name} is empty")
            if grid != sorted(grid):
                raise ConfigError(f"{name} must be sorted ascending")
            object.__setattr__(self, name, tuple(grid))
        if self.subset_size < 1 or self.num_subsets < 1:
            raise ConfigError("subset size and count must be positive")
        if self.accuracy_tolerance < 0:
            raise ConfigError("accuracy tolerance must be >= 0")


@dataclass(frozen=True)
class CandidateRow:
    kind: str
    value: float
    mean_accuracy: float
    std_accuracy: float


@dataclass
class CalibrationReport:
    chosen_rank: int
    chosen_prune_ratio: float
    threshold: float
    table: List[CandidateRow] = field(default_factory=list)

    def records(self):
        """One flat record per candidate, then one summary record."""
        out = [{"record": "candidate", **asdict(row)} for row in self.table]
        out.append({"record": "choice", "rank": self.chosen_rank,
                    "prune_ratio": self.chosen_prune_ratio, "threshold": self.threshold})
        return out


def calibration_subsets(labels, num_classes, subset_size, num_subsets, seed):
    """Disjoint index subsets, stratified by class as far as the data allows.

    Each class's indices are shuffled with a seeded generator and the classes
    are interleaved round-robin; consecutive blocks of ``subset_size`` from
    that interleaving form the subsets.
    """
    labels = np.asarray(labels)
    if subset_size < num_classes:
        raise ConfigError(f"subset size {subset_size} is below the class count {num_classes}")
    need = subset_size * num_subsets
    if need > labels.shape[0]:
        raise ConfigError(f"{num_subsets} subsets of {subset_size} need {need} samples, "
                          f"only {labels.shape[0]} available")
    rng = np.random.Generator(np.random.Philox(derive_seed(seed, "calibration-subsets")))
    pools = []
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        pools.append(list(rng.permutation(idx)))
    order = []
    depth = 0
    while len(order) < need:
        for pool in pools:
            if depth < len(pool):
                order.append(int(pool[depth]))
        depth += 1
    order = np.asarray(order[:need])
    return [order[k * subset_size:(k + 1) * subset_size] for k in range(num_subsets)]


def _score(encoder, model, data, subsets):
    accs = np.array([accuracy(encoder, model, data.subset(s)) for s in subsets])
    return float(accs.mean()), float(accs.std())


def select_rank(encoder, model, data, plan, train=None, factors=None):
    """Smallest rank whose mean subset accuracy is within tolerance of the best.

    Returns ``(rank, rows, factors)``; ``factors`` is the SVD reused across the
    grid (None in random mode).
    """
    subsets = calibration_subsets(data.labels, data.num_classes, plan.subset_size,
                                  plan.num_subsets, plan.seed)
    if plan.mode == SVD_APPROX and factors is None:
        factors = truncated_svd(encoder.P, max(plan.rank_grid))
    rows = []
    for r in plan.rank_grid:
        enc, new_model = decompose_encoder(encoder, r, plan.mode, plan.seed, train, factors)
        mean, std = _score(enc, new_model or model, data, subsets)
        rows.append(CandidateRow("rank", r, mean, std))
    best = max(row.mean_accuracy for row in rows)
    chosen = next(int(row.value) for row in rows
                  if row.mean_accuracy >= best - plan.accuracy_tolerance)
    return chosen, rows, factors


def select_prune_ratio(encoder, model, data, plan):
    """Largest ratio whose mean accuracy stays within tolerance of no pruning.

    ``encoder``/``model`` are the decomposed pair; ratios that would leave
    fewer dimensions than classes are reported as NaN and never chosen.
    """
    subsets = calibration_subsets(data.labels, data.num_classes, plan.subset_size,
                                  plan.num_subsets, plan.seed)
    reference, _ = _score(encoder, model, data, subsets)
    rows = []
    chosen = 0.0
    for ratio in plan.prune_grid:
        if pruned_dim(model.dim, ratio) < model.num_classes:
            rows.append(CandidateRow("prune", ratio, float("nan"), float("nan")))
            continue
        enc, mdl = prune(encoder, model, ratio)
        mean, std = _score(enc, mdl, data, subsets)
        rows.append(CandidateRow("prune", ratio, mean, std))
        if mean >= reference - plan.accuracy_tolerance:
            chosen = max(chosen, float(ratio))
    return chosen, rows


def margins(model, H):
    _, m = predict_batch(model, H)
    return m


def calibrate_threshold(model, H):
    """Mean top-1 minus top-2 cosine margin over the calibration hypervectors."""
    return float(np.mean(margins(model, H)))


def calibrate(encoder, model, data, plan, train=None):
    """Rank search, then prune search on the chosen rank.

    Returns ``(report, factors)``. The threshold field is left at 0; it is
    set after quantization, on the final model.
    """
    rank, rank_rows, factors = select_rank(encoder, model, data, plan, train)
    enc, new_model = decompose_encoder(encoder, rank, plan.mode, plan.seed, train, factors)
    ratio, prune_rows = select_prune_ratio(enc, new_model or model, data, plan)
    return CalibrationReport(rank, ratio, 0.0, rank_rows + prune_rows), factors


def threshold_on_subsets(encoder, model, data, plan):
    """Early-exit threshold from the union of the calibration subsets."""
    subsets = calibration_subsets(data.labels, data.num_classes, plan.subset_size,
                                  plan.num_subsets, plan.seed)
    idx = np.concatenate(subsets)
    return calibrate_threshold(model, encode_all(encoder, data.features[idx]))
