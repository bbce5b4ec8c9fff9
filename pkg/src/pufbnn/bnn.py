"""Exact integer forward pass for fully connected binarized networks.

Hidden layers compute sign(W^T x - B) where W is a packed {-1,+1} matrix,
x a packed {-1,+1} vector and B a vector of even integer thresholds that
absorb batch normalization. The output layer is integer-affine (matvec
plus bias) followed by argmax; a 10-class head cannot be a sign column.

sign(0) = +1 throughout. With even fan-in m, every column sum y_k has the
parity of m, so y_k - B_k stays even and the comparator never sits on an
odd boundary.
"""

from __future__ import annotations

import warnings

import numpy as np

from .bitops import (
    BinWeightMatrix,
    BipolarVec,
    pack_bits,
    pack_pm1_batch,
    xnor_popcount_matvec,
    xnor_popcount_matvec_batch,
)
from .errors import (
    DegenerateChannelError,
    DimensionError,
    EmptyDatasetError,
    ParityError,
    RoundingGapWarning,
)


class ThresholdVec:
    """Per-column even integer thresholds B with |B_k| <= m + 2.

    Thresholds outside [-m, m] make a column constant; the extra 2 of slack
    admits the protected form B_k * (1 - 2R_k) + 2R_k without re-clamping.
    """

    __slots__ = ("values",)

    def __init__(self, values):
        values = np.ascontiguousarray(values, dtype=np.int32)
        if values.ndim != 1:
            raise ValueError("thresholds must be a 1-d vector")
        if np.any(values % 2 != 0):
            raise ParityError(f"thresholds must be even, got {values.tolist()}")
        values.setflags(write=False)
        self.values = values

    def check_fan_in(self, m: int) -> "ThresholdVec":
        if np.any(np.abs(self.values) > m + 2):
            raise ValueError(
                f"|threshold| may not exceed fan-in + 2 = {m + 2}, "
                f"got {self.values.tolist()}"
            )
        return self

    def __len__(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, ThresholdVec) and bool(
            np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash(self.values.tobytes())

    def __repr__(self) -> str:
        return f"ThresholdVec({self.values.tolist()})"


def sign_threshold(y: np.ndarray, B: ThresholdVec) -> BipolarVec:
    """Comparator activation: +1 where y_k - B_k >= 0, else -1."""
    y = np.asarray(y)
    if y.shape[0] != len(B):
        raise DimensionError("sign_threshold input", len(B), y.shape[0])
    diff = y.astype(np.int64) - B.values
    if np.any(diff % 2 != 0):
        raise ParityError(
            "y_k - B_k must be even for every column; an odd difference "
            "signals a mis-folded threshold"
        )
    return BipolarVec.from_bools(diff >= 0)


def sign_threshold_batch(y: np.ndarray, B: ThresholdVec) -> np.ndarray:
    """Batch variant on (N, n) integer pre-activations; returns bool (N, n)."""
    diff = np.asarray(y, dtype=np.int64) - B.values[None, :]
    if np.any(diff % 2 != 0):
        raise ParityError("y_k - B_k must be even for every column")
    return diff >= 0


def round_to_even(values: np.ndarray) -> np.ndarray:
    """Round to the nearest even integer, ties toward 0."""
    half = np.asarray(values, dtype=np.float64) / 2.0
    rounded = np.sign(half) * np.ceil(np.abs(half) - 0.5)
    return (2 * rounded).astype(np.int64)


def pad_to_even_fanin(w_pm1: np.ndarray, t_real: np.ndarray):
    """Make an odd fan-in even: append a constant +1 input row and shift
    the real-valued thresholds by +1, which preserves every decision
    (y + 1 vs t + 1). The caller feeds the shifted thresholds through
    round_to_even / fold_batchnorm at the new fan-in."""
    w_pm1 = np.asarray(w_pm1)
    t_real = np.asarray(t_real, dtype=np.float64)
    if w_pm1.shape[0] % 2 == 0:
        return w_pm1, t_real
    pad_row = np.ones((1, w_pm1.shape[1]), dtype=w_pm1.dtype)
    return np.concatenate([w_pm1, pad_row], axis=0), t_real + 1.0


def fold_batchnorm(gamma, beta, mu, sigma, eps: float, m: int):
    """Fold batch-norm statistics into even integer thresholds.

    Returns (ThresholdVec, flip) where flip marks columns with gamma < 0:
    those columns keep a single global comparison direction by flipping
    their weight signs instead of the threshold inequality, so the caller
    must negate the marked weight columns.

    The real-valued decision boundary is t_k = mu_k - beta_k*sqrt(sigma_k+eps)/gamma_k
    (negated where gamma_k < 0); rounding to the nearest even integer
    preserves sign(y - t_k) for every even y unless an even integer lies
    strictly between t_k and its rounding, which cannot happen.

    Thresholds are clamped to [-m, m+2]: both ends give a constant column
    (y >= -m always, y < m+2 always) and the asymmetric range is closed
    under the protected form (1-2R)B + 2R, so protecting a clamped
    threshold never leaves the valid range.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma + eps <= 0):
        raise ValueError("sigma_k + eps must be positive")
    if np.any(gamma == 0):
        raise DegenerateChannelError(
            f"gamma is 0 for channels {np.nonzero(gamma == 0)[0].tolist()}"
        )
    t = mu - beta * np.sqrt(sigma + eps) / gamma
    flip = gamma < 0
    t = np.where(flip, -t, t)
    b = np.clip(round_to_even(t), -m, m + 2)
    # rounding down past an attainable even y = B flips that one decision
    gap = (t > b) & (b <= m)
    if np.any(gap):
        where = np.nonzero(gap)[0]
        shown = ", ".join(map(str, where[:6])) + (", ..." if where.size > 6 else "")
        warnings.warn(
            f"threshold rounding gap on {where.size} of {gap.size} channels "
            f"({shown}): y == B decides +1 where real batch norm is negative",
            RoundingGapWarning,
        )
    return ThresholdVec(b).check_fan_in(m), flip


class OutputLayer:
    """Integer-affine classification head: argmax(W^T x + bias)."""

    __slots__ = ("weights", "bias")

    def __init__(self, weights: BinWeightMatrix, bias):
        bias = np.ascontiguousarray(bias, dtype=np.int32)
        if bias.shape != (weights.cols,):
            raise DimensionError("output bias", weights.cols, bias.shape[0])
        bias.setflags(write=False)
        self.weights = weights
        self.bias = bias

    @property
    def fan_in(self) -> int:
        return self.weights.rows

    @property
    def n_classes(self) -> int:
        return self.weights.cols

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, OutputLayer)
            and self.weights == other.weights
            and bool(np.array_equal(self.bias, other.bias))
        )


class BnnModel:
    """Ordered sign layers plus an argmax head.

    Immutable after construction; concurrent read-only inference is safe.
    """

    __slots__ = ("layers", "output_layer")

    def __init__(self, layers, output_layer: OutputLayer):
        layers = tuple(layers)
        if not layers:
            raise ValueError("model needs at least one hidden layer")
        fan_in = layers[0][0].rows
        for i, (w, b) in enumerate(layers):
            if w.rows != fan_in:
                raise DimensionError(f"layer {i} fan-in", fan_in, w.rows)
            if len(b) != w.cols:
                raise DimensionError(f"layer {i} thresholds", w.cols, len(b))
            b.check_fan_in(w.rows)
            fan_in = w.cols
        if output_layer.fan_in != fan_in:
            raise DimensionError("output fan-in", fan_in, output_layer.fan_in)
        self.layers = layers
        self.output_layer = output_layer

    @property
    def input_width(self) -> int:
        return self.layers[0][0].rows

    @property
    def shape(self):
        """Widths along the stack, e.g. (784, 512, 512, 512, 10)."""
        dims = [self.input_width] + [w.cols for w, _ in self.layers]
        return tuple(dims + [self.output_layer.n_classes])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BnnModel)
            and len(self.layers) == len(other.layers)
            and all(
                a[0] == b[0] and a[1] == b[1]
                for a, b in zip(self.layers, other.layers)
            )
            and self.output_layer == other.output_layer
        )


def forward(model: BnnModel, x: BipolarVec) -> int:
    """Class index for one packed input; ties go to the lowest index."""
    act = x
    for w, b in model.layers:
        act = sign_threshold(xnor_popcount_matvec(w, act), b)
    head = model.output_layer
    scores = xnor_popcount_matvec(head.weights, act) + head.bias
    return int(np.argmax(scores))


def forward_batch(model: BnnModel, x_pm1: np.ndarray) -> np.ndarray:
    """Class indices for a {-1,+1} batch (N, input_width)."""
    x_pm1 = np.asarray(x_pm1)
    if x_pm1.shape[1] != model.input_width:
        raise DimensionError("batch input width", model.input_width, x_pm1.shape[1])
    words = pack_pm1_batch(x_pm1)
    for w, b in model.layers:
        y = xnor_popcount_matvec_batch(w, words)
        words = pack_bits(sign_threshold_batch(y, b))
    head = model.output_layer
    scores = xnor_popcount_matvec_batch(head.weights, words) + head.bias[None, :]
    return np.argmax(scores, axis=1)


def evaluate(model: BnnModel, dataset, t_pix: float = 0.5) -> float:
    """Fraction of dataset samples whose predicted class equals the label."""
    from .data import binarize_batch

    if len(dataset) == 0:
        raise EmptyDatasetError("cannot evaluate on an empty dataset")
    predictions = forward_batch(model, binarize_batch(dataset.images, t_pix))
    return float(np.count_nonzero(predictions == dataset.labels) / len(dataset))
