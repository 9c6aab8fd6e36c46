"""Projection encoders, class-hypervector models, training and full inference."""

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import kernels
from .errors import DegenerateInputError, DimensionError, TrainingError, UsageError
from .tensor_core import QuantizedTensor, as_matrix, as_vector

Factor = Union[np.ndarray, QuantizedTensor]

BATCH = 1024


def _real(t):
    return t.dequantize() if isinstance(t, QuantizedTensor) else t


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-feature standardization fitted on a training split.

    Statistics are held at float32 precision so that saving and loading an
    artifact reproduces them exactly. Constant features get unit std.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        as32 = lambda a: a.astype(np.float32).astype(np.float64)  # noqa: E731
        return cls(as32(mean), as32(std))

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    def apply(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DimensionError(f"features {X.shape} and labels {y.shape} disagree")
        if X.shape[0] < 1:
            raise TrainingError("dataset is empty")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise TrainingError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.features.shape[0]

    @property
    def num_features(self):
        return self.features.shape[1]

    def subset(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def normalized(self, norm):
        return Dataset(norm.apply(self.features), self.labels, self.num_classes)


@dataclass(frozen=True, eq=False)
class FullEncoder:
    """h = P^T x with a dense F x D projection P."""

    P: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "P", as_matrix(self.P, "P"))

    @property
    def input_dim(self):
        return self.P.shape[0]

    @property
    def output_dim(self):
        return self.P.shape[1]

    @property
    def encode_macs(self):
        return self.P.shape[0] * self.P.shape[1]

    def encode_batch(self, X):
        return np.asarray(X, dtype=np.float64) @ self.P


@dataclass(frozen=True, eq=False)
class DecomposedEncoder:
    """Two-step encoding through an F x r factor and an r x D' factor.

    Either factor may be a ``QuantizedTensor``; it is dequantized row by
    row (per channel) before use.
    """

    P1: Factor
    P2: Factor

    def __post_init__(self):
        if self.P1.shape[1] != self.P2.shape[0]:
            raise DimensionError(f"factor shapes {self.P1.shape} and {self.P2.shape} do not chain")

    @property
    def rank(self):
        return self.P1.shape[1]

    @property
    def input_dim(self):
        return self.P1.shape[0]

    @property
    def output_dim(self):
        return self.P2.shape[1]

    @property
    def quantized(self):
        return isinstance(self.P1, QuantizedTensor) or isinstance(self.P2, QuantizedTensor)

    @property
    def encode_macs(self):
        return self.input_dim * self.rank + self.rank * self.output_dim

    def encode_batch(self, X):
        return (np.asarray(X, dtype=np.float64) @ _real(self.P1)) @ _real(self.P2)


Encoder = Union[FullEncoder, DecomposedEncoder]


def encode(encoder, x):
    x = as_vector(x, "x")
    if x.shape[0] != encoder.input_dim:
        raise DimensionError(f"encoder expects {encoder.input_dim} features, got {x.shape[0]}")
    return encoder.encode_batch(x[None, :])[0]


def encode_batches(encoder, X, batch=BATCH):
    """Yield ``(start, H)`` blocks of encoded rows of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != encoder.input_dim:
        raise DimensionError(f"encoder expects {encoder.input_dim} features, got {X.shape}")
    for start in range(0, X.shape[0], batch):
        yield start, encoder.encode_batch(X[start:start + batch])


def encode_all(encoder, X, batch=BATCH):
    X = np.asarray(X, dtype=np.float64)
    out = np.empty((X.shape[0], encoder.output_dim))
    for start, H in encode_batches(encoder, X, batch):
        out[start:start + H.shape[0]] = H
    return out


@dataclass(frozen=True, eq=False)
class HdcModel:
    """C class hypervectors of dimension D.

    ``activation_bits`` is set for quantized models: encoded queries are then
    quantized per vector to that many bits before the integer similarity.
    """

    class_hvs: Factor
    activation_bits: Optional[int] = None
    class_norms: np.ndarray = field(init=False)

    def __post_init__(self):
        hv = self.class_hvs
        if not isinstance(hv, QuantizedTensor):
            hv = as_matrix(hv, "class_hvs")
            object.__setattr__(self, "class_hvs", hv)
        if hv.shape[0] < 2:
            raise TrainingError("a model needs at least two classes")
        if isinstance(hv, QuantizedTensor) and self.activation_bits is None:
            raise UsageError("quantized models need an activation bitwidth")
        object.__setattr__(self, "class_norms", np.linalg.norm(_real(hv), axis=1))

    @property
    def num_classes(self):
        return self.class_hvs.shape[0]

    @property
    def dim(self):
        return self.class_hvs.shape[1]

    @property
    def quantized(self):
        return isinstance(self.class_hvs, QuantizedTensor)

    @property
    def chunk(self):
        """Block length ceil(D / C) used by every similarity evaluation."""
        return -(-self.dim // self.num_classes)

    def dense(self):
        return _real(self.class_hvs)


def _class_sums(encoder, data):
    C = data.num_classes
    W = np.zeros((C, encoder.output_dim))
    for start, H in encode_batches(encoder, data.features):
        y = data.labels[start:start + H.shape[0]]
        onehot = np.zeros((H.shape[0], C))
        onehot[np.arange(H.shape[0]), y] = 1.0
        W += onehot.T @ H
    return W


def _check_classes(data):
    counts = np.bincount(data.labels, minlength=data.num_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise TrainingError(f"class {int(empty[0])} has no training samples")
    return counts


def train_centroid(encoder, data):
    """Class hypervector = sum of the encoded samples of that class."""
    _check_classes(data)
    return HdcModel(_class_sums(encoder, data))


def train_adaptive(encoder, data, lr, epochs):
    """Mispredict-weighted refinement on top of the centroid model.

    For each misclassified sample (true class t, predicted p) the update is
    ``W[t] += lr*(1-cos_t)*h`` and ``W[p] -= lr*(1-cos_p)*h``. Cosines use the
    class norms from the start of the epoch. Refinement runs on class-mean
    prototypes, which predict identically to the class sums; with no epochs
    or a zero step the plain centroid model is returned.
    """
    if not lr >= 0:
        raise UsageError(f"learning rate must be non-negative, got {lr}")
    if epochs < 0:
        raise UsageError(f"epochs must be non-negative, got {epochs}")
    counts = _check_classes(data)
    W = _class_sums(encoder, data)
    if epochs == 0 or lr == 0:
        return HdcModel(W)
    W = W / counts[:, None]
    for _ in range(epochs):
        norms = np.linalg.norm(W, axis=1)
        norms = np.where(norms > 0, norms, 1.0)
        for start, H in encode_batches(encoder, data.features):
            hn = np.linalg.norm(H, axis=1)
            y = data.labels[start:start + H.shape[0]]
            for h, nh, t in zip(H, hn, y):
                if nh == 0.0:
                    continue
                sims = (W @ h) / (norms * nh)
                p = int(np.argmax(sims))
                if p != t:
                    W[t] += lr * (1.0 - sims[t]) * h
                    W[p] -= lr * (1.0 - sims[p]) * h
    return HdcModel(W)


@dataclass(frozen=True, eq=False)
class Operands:
    """Inputs of the similarity kernels for a batch of queries."""

    W: np.ndarray
    w_scale: np.ndarray
    w_norm: np.ndarray
    H: np.ndarray
    h_scale: np.ndarray
    h_norm: np.ndarray


def similarity_operands(model, H):
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    if H.shape[1] != model.dim:
        raise DimensionError(f"model dimension is {model.dim}, query has {H.shape[1]}")
    if model.quantized:
        from .compression import quantize_mse

        hq = quantize_mse(H, model.activation_bits)
        h_norm = np.linalg.norm(hq.dequantize(), axis=1)
        Hk = np.ascontiguousarray(hq.values, dtype=np.int8)
        h_scale = hq.scales
        W = np.ascontiguousarray(model.class_hvs.values, dtype=np.int8)
        w_scale = model.class_hvs.scales.astype(np.float64)
    else:
        h_norm = np.linalg.norm(H, axis=1)
        Hk = np.ascontiguousarray(H)
        h_scale = np.ones(H.shape[0])
        W = np.ascontiguousarray(model.class_hvs)
        w_scale = np.ones(model.num_classes)
    if np.any(h_norm == 0.0):
        raise DegenerateInputError("query hypervector has zero norm")
    if np.any(model.class_norms == 0.0):
        raise DegenerateInputError("a class hypervector has zero norm")
    return Operands(W, w_scale, np.ascontiguousarray(model.class_norms, dtype=np.float64),
                    Hk, np.ascontiguousarray(h_scale, dtype=np.float64),
                    np.ascontiguousarray(h_norm, dtype=np.float64))


def full_cosines(model, H):
    ops = similarity_operands(model, H)
    cos, _ = kernels.full_scores(ops.W, ops.w_scale, ops.w_norm, ops.H, ops.h_scale,
                                 ops.h_norm, model.chunk)
    return cos


def _top2(cos):
    # stable sort on -cos: ties keep the lowest class index first
    order = np.argsort(-cos, axis=1, kind="stable")
    rows = np.arange(cos.shape[0])
    return order[:, 0], cos[rows, order[:, 0]] - cos[rows, order[:, 1]]


def predict_batch(model, H):
    """Predicted class and top-1 minus top-2 cosine margin for each row of H."""
    return _top2(full_cosines(model, H))


def predict_full(model, h):
    h = as_vector(h, "h")
    cls, margin = predict_batch(model, h[None, :])
    return int(cls[0]), float(margin[0])


def accuracy(encoder, model, data, batch=BATCH):
    """Percentage of correctly classified samples under full evaluation."""
    correct = 0
    for start, H in encode_batches(encoder, data.features, batch):
        pred, _ = predict_batch(model, H)
        correct += int(np.sum(pred == data.labels[start:start + H.shape[0]]))
    return 100.0 * correct / len(data)
