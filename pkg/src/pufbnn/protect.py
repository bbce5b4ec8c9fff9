"""Keyed reversible transforms that encrypt BNN layers in place.

A layer (W, B) is stored as (W*, B*) = (Gamma(W), delta(B)) where

    Gamma(W) = P_R D_R W P_C D_C
    delta(B) = D_C (P_C B) + 2 R_C

with P_* pairwise-swap permutations, D_* = diag(+-1) inversions, and R_C
the column-inversion bit vector indexed in post-permutation column order.
At runtime the input is transformed with beta(x) = P_R D_R x, the layer is
evaluated on the protected parameters, and the activation is recovered
with psi(b) = P_C D_C b. For every input the recovered bits equal the
plain layer's bits exactly: the row factors cancel inside the inner
product, and per column the identity

    (-1)^R * sign((-1)^R * s - 2R) == sign(s)      for even s

absorbs the inversion bit. The named schemes select which factors are
non-identity; all of them run through this one pipeline.

Column index convention (locked by the exhaustive round-trip tests):
applying a permutation P maps position k to source index p[k], where p
swaps 2i and 2i+1 iff swap bit i is set, so P is symmetric and its own
inverse. The diagonal and offset bits that follow a permutation are
indexed by the new (post-permutation) position.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .bitops import (
    BinWeightMatrix,
    BipolarVec,
    pack_bits,
    xnor_popcount_matvec_batch,
)
from .bnn import BnnModel, OutputLayer, ThresholdVec, sign_threshold_batch
from .errors import DimensionError
from .puf import PufDevice, expand_key, puf_response


class SchemeId(enum.Enum):
    """Which of the four transform factors are keyed (non-identity)."""

    NONE = 0
    ROW_SWAP_INV = 1
    COL_SWAP_INV = 2
    ROW_INV_COL_SWAP = 3
    ROW_INV_ONLY = 4
    COL_INV_ONLY = 5
    ROW_SWAP_ONLY = 6
    COL_SWAP_ONLY = 7


# roles in reported key-length order: swap part first where both appear,
# e.g. a rows-scheme cell prints as "m/2+m"
_SCHEME_ROLES = {
    SchemeId.NONE: (),
    SchemeId.ROW_SWAP_INV: ("rowswap", "rowinv"),
    SchemeId.COL_SWAP_INV: ("colswap", "colinv"),
    SchemeId.ROW_INV_COL_SWAP: ("rowinv", "colswap"),
    SchemeId.ROW_INV_ONLY: ("rowinv",),
    SchemeId.COL_INV_ONLY: ("colinv",),
    SchemeId.ROW_SWAP_ONLY: ("rowswap",),
    SchemeId.COL_SWAP_ONLY: ("colswap",),
}

_CLI_NAMES = {
    "rows": SchemeId.ROW_SWAP_INV,
    "cols": SchemeId.COL_SWAP_INV,
    "rowinv-colswap": SchemeId.ROW_INV_COL_SWAP,
    "rowinv": SchemeId.ROW_INV_ONLY,
    "colinv": SchemeId.COL_INV_ONLY,
    "rowswap": SchemeId.ROW_SWAP_ONLY,
    "colswap": SchemeId.COL_SWAP_ONLY,
    "none": SchemeId.NONE,
}


def scheme_from_name(name: str) -> SchemeId:
    try:
        return _CLI_NAMES[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; one of {sorted(_CLI_NAMES)}")


def scheme_name(scheme: SchemeId) -> str:
    return {v: k for k, v in _CLI_NAMES.items()}[scheme]


def role_length(role: str, m: int, n: int) -> int:
    return {"rowinv": m, "rowswap": m // 2, "colinv": n, "colswap": n // 2}[role]


def key_length_parts(scheme: SchemeId, m: int, n: int) -> tuple[int, ...]:
    return tuple(role_length(r, m, n) for r in _SCHEME_ROLES[scheme])


def key_length_formula(scheme: SchemeId, m: int, n: int) -> str:
    """Table-style key length cell, e.g. '392+784' for rows on 784 fan-in."""
    parts = key_length_parts(scheme, m, n)
    return "+".join(str(p) for p in parts) if parts else "0"


def key_length_bits(scheme: SchemeId, m: int, n: int, reuse: bool = False) -> int:
    parts = key_length_parts(scheme, m, n)
    if not parts:
        return 0
    if reuse and scheme in (SchemeId.ROW_SWAP_INV, SchemeId.COL_SWAP_INV):
        return max(parts)  # single key, first half reused for swapping
    return sum(parts)


class PermutationSpec:
    """Self-inverse pairwise-swap permutation: bit i swaps 2i and 2i+1.

    Odd dims are allowed: the trailing unpaired index is a fixed point.
    """

    __slots__ = ("dim", "swap_bits", "index_map")

    def __init__(self, dim: int, swap_bits: np.ndarray):
        swap_bits = np.ascontiguousarray(swap_bits, dtype=np.uint8)
        if swap_bits.shape != (dim // 2,):
            raise DimensionError("swap bits", dim // 2, swap_bits.shape[0])
        p = np.arange(dim)
        active = np.nonzero(swap_bits)[0]
        p[2 * active], p[2 * active + 1] = p[2 * active + 1], p[2 * active].copy()
        self.dim = dim
        self.swap_bits = swap_bits
        self.index_map = p

    def apply(self, v: np.ndarray, axis: int = -1) -> np.ndarray:
        return np.take(v, self.index_map, axis=axis)

    def as_matrix(self) -> np.ndarray:
        mat = np.zeros((self.dim, self.dim), dtype=np.int64)
        mat[np.arange(self.dim), self.index_map] = 1
        return mat


class DiagonalSpec:
    """Diagonal sign matrix: entry i is (-1)**sign_bits[i]; D @ D = I."""

    __slots__ = ("dim", "sign_bits")

    def __init__(self, dim: int, sign_bits: np.ndarray):
        sign_bits = np.ascontiguousarray(sign_bits, dtype=np.uint8)
        if sign_bits.shape != (dim,):
            raise DimensionError("sign bits", dim, sign_bits.shape[0])
        self.dim = dim
        self.sign_bits = sign_bits

    def signs(self) -> np.ndarray:
        return 1 - 2 * self.sign_bits.astype(np.int64)

    def as_matrix(self) -> np.ndarray:
        return np.diag(self.signs())


def invert_column(col: BipolarVec, b_k: int, r_k: int) -> tuple[BipolarVec, int]:
    """Per-column primitive: W*_{:,k} = (-1)^R W_{:,k}, B* = (1-2R)B + 2R."""
    if b_k % 2 != 0:
        raise ValueError(f"threshold must be even, got {b_k}")
    if r_k == 0:
        return col, b_k
    return BipolarVec.from_bools(~col.to_bools()), -b_k + 2


def recover_column_output(bit: int, r_k: int) -> int:
    """Undo a column inversion on the +-1 activation bit."""
    return -bit if r_k else bit


@dataclass(frozen=True)
class LayerKeys:
    """Per-layer key material. Unused roles are all-zero (identity)."""

    scheme: SchemeId
    row_inv: np.ndarray
    row_swap: np.ndarray
    col_inv: np.ndarray
    col_swap: np.ndarray

    @property
    def m(self) -> int:
        return self.row_inv.shape[0]

    @property
    def n(self) -> int:
        return self.col_inv.shape[0]

    def role(self, name: str) -> np.ndarray:
        return getattr(self, {"rowinv": "row_inv", "rowswap": "row_swap",
                              "colinv": "col_inv", "colswap": "col_swap"}[name])

    @classmethod
    def identity(cls, m: int, n: int, scheme: SchemeId = SchemeId.NONE) -> "LayerKeys":
        return cls(
            scheme,
            np.zeros(m, dtype=np.uint8),
            np.zeros(m // 2, dtype=np.uint8),
            np.zeros(n, dtype=np.uint8),
            np.zeros(n // 2, dtype=np.uint8),
        )

    def replace_role(self, name: str, bits: np.ndarray) -> "LayerKeys":
        fields = {
            "scheme": self.scheme,
            "row_inv": self.row_inv,
            "row_swap": self.row_swap,
            "col_inv": self.col_inv,
            "col_swap": self.col_swap,
        }
        fields[{"rowinv": "row_inv", "rowswap": "row_swap",
                "colinv": "col_inv", "colswap": "col_swap"}[name]] = bits
        return LayerKeys(**fields)


class KeySchedule:
    """Key material for every layer of a model, derived from one response."""

    __slots__ = ("layers",)

    def __init__(self, layers):
        self.layers = tuple(layers)

    def in_use_lengths(self) -> list[tuple[int, str, int]]:
        """(layer index, role, bit length) for every keyed role in order."""
        out = []
        for i, lk in enumerate(self.layers):
            for role in _SCHEME_ROLES[lk.scheme]:
                out.append((i, role, role_length(role, lk.m, lk.n)))
        return out

    @property
    def total_in_use_bits(self) -> int:
        return sum(length for _, _, length in self.in_use_lengths())

    def flip_bits(self, flat_positions) -> "KeySchedule":
        """New schedule with the given in-use bit positions flipped.

        Positions index the concatenation of all in-use role strings in
        in_use_lengths() order.
        """
        spans = self.in_use_lengths()
        layers = list(self.layers)
        offset = 0
        positions = np.sort(np.asarray(flat_positions, dtype=np.int64))
        if positions.size and (positions[0] < 0 or positions[-1] >= self.total_in_use_bits):
            raise ValueError("flip position out of range")
        for layer_idx, role, length in spans:
            local = positions[(positions >= offset) & (positions < offset + length)] - offset
            if local.size:
                bits = layers[layer_idx].role(role).copy()
                bits[local] ^= 1
                layers[layer_idx] = layers[layer_idx].replace_role(role, bits)
            offset += length
        return KeySchedule(layers)


def build_key_schedule(response: bytes, shape, schemes, reuse: bool = False) -> KeySchedule:
    """Expand a PUF response into per-layer role bit strings.

    shape: sequence of (m, n) for each sign layer; schemes: one SchemeId per
    layer. With reuse=True the single-key mode is used: the first
    half of an inversion key doubles as the swap key for the same axis.
    """
    shape = list(shape)
    schemes = list(schemes)
    if len(schemes) != len(shape):
        raise DimensionError("schemes per layer", len(shape), len(schemes))
    layers = []
    for i, ((m, n), scheme) in enumerate(zip(shape, schemes)):
        lk = LayerKeys.identity(m, n, scheme)
        roles = set(_SCHEME_ROLES[scheme])
        if reuse:
            if {"rowinv", "rowswap"} <= roles:
                inv = expand_key(response, f"L{i}.rowinv", m)
                lk = lk.replace_role("rowinv", inv).replace_role("rowswap", inv[: m // 2].copy())
                roles -= {"rowinv", "rowswap"}
            if {"colinv", "colswap"} <= roles:
                inv = expand_key(response, f"L{i}.colinv", n)
                lk = lk.replace_role("colinv", inv).replace_role("colswap", inv[: n // 2].copy())
                roles -= {"colinv", "colswap"}
        for role in roles:
            length = role_length(role, m, n)
            if length:  # a swap role is empty when the axis has no pairs
                lk = lk.replace_role(role, expand_key(response, f"L{i}.{role}", length))
        layers.append(lk)
    return KeySchedule(layers)


# --- the generic Gamma / delta / beta / psi pipeline on unpacked arrays ---


def _gamma_delta(w_bools: np.ndarray, b_vals: np.ndarray, keys: LayerKeys):
    """Protected (W*, B*) as (bool matrix, int vector)."""
    p_r = PermutationSpec(keys.m, keys.row_swap).index_map
    p_c = PermutationSpec(keys.n, keys.col_swap).index_map
    w = w_bools[p_r, :] ^ keys.row_inv[p_r].astype(bool)[:, None]
    w = w[:, p_c] ^ keys.col_inv.astype(bool)[None, :]
    r_c = keys.col_inv.astype(np.int64)
    b = (1 - 2 * r_c) * b_vals[p_c] + 2 * r_c
    return w, b


def _beta_batch(x_bools: np.ndarray, keys: LayerKeys) -> np.ndarray:
    """beta = P_R D_R applied to each row of a bool batch (N, m)."""
    p_r = PermutationSpec(keys.m, keys.row_swap).index_map
    return x_bools[:, p_r] ^ keys.row_inv[p_r].astype(bool)[None, :]


def _psi_batch(bits: np.ndarray, keys: LayerKeys) -> np.ndarray:
    """psi = P_C D_C applied to each row of a bool batch (N, n)."""
    p_c = PermutationSpec(keys.n, keys.col_swap).index_map
    return bits[:, p_c] ^ keys.col_inv[p_c].astype(bool)[None, :]


def protect_layer(w: BinWeightMatrix, b: ThresholdVec, keys: LayerKeys):
    """Apply Gamma and delta to one layer's packed parameters."""
    if keys.m != w.rows:
        raise DimensionError("layer key rows", w.rows, keys.m)
    if keys.n != w.cols:
        raise DimensionError("layer key cols", w.cols, keys.n)
    wb, bb = _gamma_delta(w.to_bools(), b.values.astype(np.int64), keys)
    return BinWeightMatrix.from_bools(wb), ThresholdVec(bb).check_fan_in(w.rows)


def unprotect_layer(w_star: BinWeightMatrix, b_star: ThresholdVec, keys: LayerKeys):
    """Invert protect_layer: recover (W, B) from (W*, B*) and the keys."""
    p_r = PermutationSpec(keys.m, keys.row_swap).index_map
    p_c = PermutationSpec(keys.n, keys.col_swap).index_map
    wb = w_star.to_bools()
    wb = wb[:, p_c] ^ keys.col_inv[p_c].astype(bool)[None, :]
    wb = wb[p_r, :] ^ keys.row_inv.astype(bool)[:, None]
    r_c = keys.col_inv[p_c].astype(np.int64)
    b = (1 - 2 * r_c) * (b_star.values.astype(np.int64)[p_c] - 2 * r_c)
    return BinWeightMatrix.from_bools(wb), ThresholdVec(b).check_fan_in(w_star.rows)


# --- the three named schemes (thin wrappers over the generic pipeline) ---


def _check_bits(name: str, bits, expected: int) -> np.ndarray:
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    if bits.shape != (expected,):
        raise DimensionError(name, expected, bits.shape[0])
    return bits


def _keys_rows(m: int, n: int, row_swap_bits, row_inv_bits) -> LayerKeys:
    lk = LayerKeys.identity(m, n, SchemeId.ROW_SWAP_INV)
    return lk.replace_role("rowswap", _check_bits("row swap bits", row_swap_bits, m // 2)) \
             .replace_role("rowinv", _check_bits("row inv bits", row_inv_bits, m))


def protect_rows(w: BinWeightMatrix, b: ThresholdVec, row_swap_bits, row_inv_bits):
    """Swap + inversion along rows: W* = P_R D_R W, thresholds unchanged."""
    return protect_layer(w, b, _keys_rows(w.rows, w.cols, row_swap_bits, row_inv_bits))


def transform_input_rows(x: BipolarVec, row_swap_bits, row_inv_bits) -> BipolarVec:
    """Runtime input transform for the row scheme: x* = P_R D_R x."""
    keys = _keys_rows(x.length, 2, row_swap_bits, row_inv_bits)
    out = _beta_batch(x.to_bools()[None, :], keys)[0]
    return BipolarVec.from_bools(out)


def _keys_cols(m: int, n: int, col_swap_bits, col_inv_bits) -> LayerKeys:
    lk = LayerKeys.identity(m, n, SchemeId.COL_SWAP_INV)
    return lk.replace_role("colswap", _check_bits("col swap bits", col_swap_bits, n // 2)) \
             .replace_role("colinv", _check_bits("col inv bits", col_inv_bits, n))


def protect_cols(w: BinWeightMatrix, b: ThresholdVec, col_swap_bits, col_inv_bits):
    """Swap + inversion along columns: W* = W P_C D_C, B* = D_C(P_C B) + 2R."""
    return protect_layer(w, b, _keys_cols(w.rows, w.cols, col_swap_bits, col_inv_bits))


def recover_output_cols(bits: BipolarVec, col_swap_bits, col_inv_bits) -> BipolarVec:
    """Runtime output recovery for the column scheme: y = P_C D_C y*."""
    keys = _keys_cols(2, bits.length, col_swap_bits, col_inv_bits)
    out = _psi_batch(bits.to_bools()[None, :], keys)[0]
    return BipolarVec.from_bools(out)


def protect_rowinv_colswap(w: BinWeightMatrix, b: ThresholdVec, row_inv_bits, col_swap_bits):
    """Row inversion + column swap: W* = D_R W P_C, B* = P_C B."""
    lk = LayerKeys.identity(w.rows, w.cols, SchemeId.ROW_INV_COL_SWAP)
    lk = lk.replace_role("rowinv", _check_bits("row inv bits", row_inv_bits, w.rows)) \
           .replace_role("colswap", _check_bits("col swap bits", col_swap_bits, w.cols // 2))
    return protect_layer(w, b, lk)


# --- whole-model protection ---


@dataclass(frozen=True)
class ProtectedLayer:
    w_star: BinWeightMatrix
    b_star: ThresholdVec
    scheme: SchemeId


class ProtectedModel:
    """Protected sign layers, the public challenge, and the plain head.

    Carries no key material: rebuilding the transforms requires the PUF
    device that answered the challenge at protection time.
    """

    __slots__ = ("layers", "output_layer", "challenge", "reuse", "key_bits")

    def __init__(self, layers, output_layer: OutputLayer, challenge: bytes,
                 reuse: bool = False, key_bits=None):
        self.layers = tuple(layers)
        self.output_layer = output_layer
        self.challenge = bytes(challenge)
        self.reuse = bool(reuse)
        if key_bits is None:
            key_bits = tuple(
                key_length_bits(pl.scheme, pl.w_star.rows, pl.w_star.cols, reuse)
                for pl in self.layers
            )
        self.key_bits = tuple(key_bits)

    @property
    def input_width(self) -> int:
        return self.layers[0].w_star.rows

    def layer_shapes(self):
        return [(pl.w_star.rows, pl.w_star.cols) for pl in self.layers]

    def schemes(self):
        return [pl.scheme for pl in self.layers]

    def schedule(self, device: PufDevice) -> KeySchedule:
        response = puf_response(device, self.challenge)
        return build_key_schedule(response, self.layer_shapes(), self.schemes(), self.reuse)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ProtectedModel)
            and self.layers == other.layers
            and self.output_layer == other.output_layer
            and self.challenge == other.challenge
            and self.reuse == other.reuse
            and self.key_bits == other.key_bits
        )


def protect_model(model: BnnModel, device: PufDevice, challenge: bytes,
                  scheme: SchemeId, layer_indices=None, reuse: bool = False) -> ProtectedModel:
    """Protect the selected sign layers (default: all) of a model."""
    n_layers = len(model.layers)
    if layer_indices is None:
        layer_indices = range(n_layers)
    chosen = set(int(i) for i in layer_indices)
    if not chosen <= set(range(n_layers)):
        raise ValueError(f"layer indices {sorted(chosen)} out of range 0..{n_layers - 1}")
    schemes = [scheme if i in chosen else SchemeId.NONE for i in range(n_layers)]
    shape = [(w.rows, w.cols) for w, _ in model.layers]
    schedule = build_key_schedule(puf_response(device, challenge), shape, schemes, reuse)
    layers = []
    for (w, b), keys in zip(model.layers, schedule.layers):
        w_star, b_star = protect_layer(w, b, keys)
        layers.append(ProtectedLayer(w_star, b_star, keys.scheme))
    return ProtectedModel(layers, model.output_layer, challenge, reuse)


def unprotect(pm: ProtectedModel, device: PufDevice) -> BnnModel:
    """Rebuild the plain model from a protected one plus its device."""
    schedule = pm.schedule(device)
    layers = [
        unprotect_layer(pl.w_star, pl.b_star, keys)
        for pl, keys in zip(pm.layers, schedule.layers)
    ]
    return BnnModel(layers, pm.output_layer)


def as_plain_model(pm: ProtectedModel) -> BnnModel:
    """The attacker's view: use (W*, B*) directly with identity transforms."""
    return BnnModel([(pl.w_star, pl.b_star) for pl in pm.layers], pm.output_layer)


def forward_batch_with_schedule(pm: ProtectedModel, schedule: KeySchedule,
                                x_pm1: np.ndarray) -> np.ndarray:
    """Protected batch inference under an explicit key schedule."""
    x_pm1 = np.asarray(x_pm1)
    if x_pm1.shape[1] != pm.input_width:
        raise DimensionError("batch input width", pm.input_width, x_pm1.shape[1])
    bits = x_pm1 > 0
    for pl, keys in zip(pm.layers, schedule.layers):
        bits = _beta_batch(bits, keys)
        y = xnor_popcount_matvec_batch(pl.w_star, pack_bits(bits))
        bits = _psi_batch(sign_threshold_batch(y, pl.b_star), keys)
    head = pm.output_layer
    scores = xnor_popcount_matvec_batch(head.weights, pack_bits(bits)) + head.bias[None, :]
    return np.argmax(scores, axis=1)


def protected_forward_batch(pm: ProtectedModel, device: PufDevice,
                            x_pm1: np.ndarray) -> np.ndarray:
    """Batch inference that re-derives the key schedule from the device."""
    return forward_batch_with_schedule(pm, pm.schedule(device), x_pm1)


def protected_forward(pm: ProtectedModel, device: PufDevice, x: BipolarVec) -> int:
    """Class index for one input; equals the plain model's class exactly.

    A wrong device raises nothing and yields silently wrong results; the
    degradation, not detection, is the security property.
    """
    if x.length != pm.input_width:
        raise DimensionError("input width", pm.input_width, x.length)
    return int(protected_forward_batch(pm, device, x.to_pm1()[None, :])[0])


def protected_evaluate(pm: ProtectedModel, device: PufDevice, dataset,
                       t_pix: float = 0.5) -> float:
    """Accuracy of protected inference with the correct device."""
    from .data import binarize_batch
    from .errors import EmptyDatasetError

    if len(dataset) == 0:
        raise EmptyDatasetError("cannot evaluate on an empty dataset")
    preds = protected_forward_batch(pm, device, binarize_batch(dataset.images, t_pix))
    return float(np.count_nonzero(preds == dataset.labels) / len(dataset))
