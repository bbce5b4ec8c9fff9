"""Functional RRAM crossbar backend with differential two-cell weights.

Each +-1 weight occupies a (top, bottom) cell pair: (g_on, g_off) encodes
+1 and (g_off, g_on) encodes -1. An input +-1 drives the paired lines with
(1,0) or (0,1), so a cell pair contributes g_on when weight and input
match and g_off otherwise, and the column current is

    I_k = n_match_k * g_on + (m - n_match_k) * g_off,   n_match_k = (m + y_k) / 2.

The comparator replaces ADC plus activation: column k fires +1 iff
I_k >= I_th,k, with I_th,k = ((m+B_k)/2) g_on + ((m-B_k)/2) g_off, the
affine map that makes the ideal comparator reproduce sign(y_k - B_k)
exactly. At exact equality the comparator outputs +1, mirroring
sign(0) = +1.

With sigma_rel == 0 currents are evaluated through the match-count closed
form above, so ideal currents and thresholds are identical float
expressions and the comparator is bit-exact for any g_on > g_off >= 0.
With sigma_rel > 0 every cell's conductance is multiplied by an
independent lognormal factor exp(N(0, sigma_rel)) frozen at map time
(device-to-device variation, not cycle-to-cycle), and currents are
accumulated cell by cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitops import BinWeightMatrix, BipolarVec, pack_pm1_batch, xnor_popcount_matvec_batch
from .bnn import BnnModel, ThresholdVec
from .errors import DimensionError, EmptyDatasetError
from .protect import KeySchedule, ProtectedModel, PufDevice, _beta_batch, _psi_batch


@dataclass(frozen=True)
class DeviceModel:
    """RRAM cell population: on/off conductances and relative variation."""

    g_on: float = 1.0
    g_off: float = 0.0
    sigma_rel: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.g_on > self.g_off >= 0):
            raise ValueError(f"need g_on > g_off >= 0, got {self.g_on}, {self.g_off}")
        if self.sigma_rel < 0:
            raise ValueError("sigma_rel must be >= 0")

    @property
    def ideal(self) -> bool:
        return self.sigma_rel == 0


@dataclass(frozen=True)
class ComparatorConfig:
    """Per-column threshold currents plus an additive comparator offset."""

    i_th: np.ndarray
    offset: float = 0.0


class CrossbarArray:
    """One mapped weight matrix: m x n differential cell pairs.

    Immutable after mapping; concurrent inference is safe. The source bit
    matrix is retained for the exact ideal-current path.
    """

    __slots__ = ("rows", "cols", "g_top", "g_bottom", "device", "_weights")

    def __init__(self, weights: BinWeightMatrix, device: DeviceModel,
                 g_top: np.ndarray, g_bottom: np.ndarray):
        self.rows = weights.rows
        self.cols = weights.cols
        g_top.setflags(write=False)
        g_bottom.setflags(write=False)
        self.g_top = g_top
        self.g_bottom = g_bottom
        self.device = device
        self._weights = weights


def map_weights(w: BinWeightMatrix, device: DeviceModel) -> CrossbarArray:
    """Program a weight matrix onto a fresh crossbar array."""
    plus = w.to_bools()
    g_top = np.where(plus, device.g_on, device.g_off).astype(np.float64)
    g_bottom = np.where(plus, device.g_off, device.g_on).astype(np.float64)
    if device.sigma_rel > 0:
        rng = np.random.default_rng(device.seed)
        g_top = g_top * np.exp(rng.normal(0.0, device.sigma_rel, g_top.shape))
        g_bottom = g_bottom * np.exp(rng.normal(0.0, device.sigma_rel, g_bottom.shape))
    return CrossbarArray(w, device, g_top, g_bottom)


def encode_input(x) -> tuple[np.ndarray, np.ndarray]:
    """Paired line voltages: +1 -> (1,0), -1 -> (0,1)."""
    if isinstance(x, BipolarVec):
        plus = x.to_bools()
    else:
        plus = np.asarray(x) > 0
    v_top = plus.astype(np.float64)
    return v_top, 1.0 - v_top


def _match_counts(array: CrossbarArray, plus_batch: np.ndarray) -> np.ndarray:
    """n_match per column for a bool input batch (N, m)."""
    y = xnor_popcount_matvec_batch(array._weights, pack_pm1_batch(
        np.where(plus_batch, 1, -1).astype(np.int8)))
    return (array.rows + y) // 2


def analog_matvec(array: CrossbarArray, encoded) -> np.ndarray:
    """Column currents for one encoded input."""
    v_top, v_bottom = encoded
    if v_top.shape[-1] != array.rows:
        raise DimensionError("encoded input", array.rows, v_top.shape[-1])
    if array.device.ideal:
        n_match = _match_counts(array, v_top[None, :] > 0.5)[0]
        return n_match * array.device.g_on + (array.rows - n_match) * array.device.g_off
    return v_top @ array.g_top + v_bottom @ array.g_bottom


def _analog_matvec_batch(array: CrossbarArray, v_top: np.ndarray,
                         v_bottom: np.ndarray) -> np.ndarray:
    if array.device.ideal:
        n_match = _match_counts(array, v_top > 0.5).astype(np.float64)
        return n_match * array.device.g_on + (array.rows - n_match) * array.device.g_off
    return v_top @ array.g_top + v_bottom @ array.g_bottom


def thresholds_to_currents(b: ThresholdVec, m: int, device: DeviceModel) -> ComparatorConfig:
    """Map integer thresholds into the current domain.

    I_k >= I_th,k iff y_k >= B_k in the ideal model.
    """
    n_th = (m + b.values.astype(np.float64)) / 2.0
    i_th = n_th * device.g_on + (m - n_th) * device.g_off
    return ComparatorConfig(i_th=i_th)


def comparator(currents: np.ndarray, config: ComparatorConfig) -> np.ndarray:
    """Column activations: +1 where the current reaches the threshold."""
    return currents >= config.i_th + config.offset


def _head_scores(array: CrossbarArray, v_top, v_bottom, bias) -> np.ndarray:
    """Argmax head read out through the crossbar.

    Ideal devices recover the integer pre-activations exactly (so argmax
    tie-breaking matches the digital path bit for bit); under variation the
    currents are mapped back through the inverse of the ideal affine
    current map, giving a float estimate.
    """
    dev = array.device
    if dev.ideal:
        n_match = _match_counts(array, v_top > 0.5)
        return (2 * n_match - array.rows) + bias[None, :].astype(np.int64)
    currents = v_top @ array.g_top + v_bottom @ array.g_bottom
    y_est = (2.0 * currents - array.rows * (dev.g_on + dev.g_off)) / (dev.g_on - dev.g_off)
    return y_est + bias[None, :]


def crossbar_forward_batch(model, device_model: DeviceModel, x_pm1: np.ndarray,
                           puf_device: PufDevice | None = None,
                           schedule: KeySchedule | None = None) -> np.ndarray:
    """Batch inference through crossbar-simulated layers.

    Accepts a BnnModel, or a ProtectedModel plus the PUF device holding its
    key (omit the device to run the attacker's no-key path).
    """
    x_pm1 = np.asarray(x_pm1)
    protected = isinstance(model, ProtectedModel)
    if protected:
        layers = [(pl.w_star, pl.b_star) for pl in model.layers]
        if schedule is None and puf_device is not None:
            schedule = model.schedule(puf_device)
        keys = schedule.layers if schedule is not None else None
    else:
        layers = list(model.layers)
        keys = None
    if x_pm1.shape[1] != layers[0][0].rows:
        raise DimensionError("batch input width", layers[0][0].rows, x_pm1.shape[1])

    bits = x_pm1 > 0
    for i, (w, b) in enumerate(layers):
        if keys is not None:
            bits = _beta_batch(bits, keys[i])
        array = map_weights(w, device_model)
        v_top = bits.astype(np.float64)
        currents = _analog_matvec_batch(array, v_top, 1.0 - v_top)
        config = thresholds_to_currents(b, w.rows, device_model)
        bits = comparator(currents, config)
        if keys is not None:
            bits = _psi_batch(bits, keys[i])
    head = model.output_layer
    array = map_weights(head.weights, device_model)
    v_top = bits.astype(np.float64)
    scores = _head_scores(array, v_top, 1.0 - v_top, head.bias.astype(np.float64))
    return np.argmax(scores, axis=1)


def crossbar_forward(model, device_model: DeviceModel, x: BipolarVec,
                     puf_device: PufDevice | None = None) -> int:
    """Class index for one input on the crossbar backend."""
    return int(crossbar_forward_batch(model, device_model, x.to_pm1()[None, :], puf_device)[0])


def crossbar_evaluate(model, device_model: DeviceModel, dataset,
                      puf_device: PufDevice | None = None, t_pix: float = 0.5) -> float:
    """Accuracy over a dataset on the crossbar backend."""
    from .data import binarize_batch

    if len(dataset) == 0:
        raise EmptyDatasetError("cannot evaluate on an empty dataset")
    preds = crossbar_forward_batch(
        model, device_model, binarize_batch(dataset.images, t_pix), puf_device
    )
    return float(np.count_nonzero(preds == dataset.labels) / len(dataset))
