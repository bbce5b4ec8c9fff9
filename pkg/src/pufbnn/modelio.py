"""Versioned binary containers for plain and protected models.

BNNM1 (plain model), all integers little-endian:

    magic b"BNNM" | u32 version=1 | u32 layer_count
    per layer:
        u8 type            0 = sign layer, 1 = argmax output layer
        u32 m | u32 n
        column bits        n * ceil(m/64) u64 words, column-major
        n * i32            thresholds (type 0) or biases (type 1)

Exactly one output layer, and it is last. Layouts are written with
explicit little-endian dtypes, so files are bit-exact across platforms.

BNNP1 (protected model):

    magic b"BNNP" | u32 version=1
    u32 challenge_length | challenge bytes
    u8 reuse_mode | u32 layer_count_of_sign_layers
    per sign layer: u8 scheme_tag | u32 declared_key_bits
    BNNM1 payload of the protected parameters

The challenge is public by design; no key material is ever written.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .bitops import BinWeightMatrix, words_needed
from .bnn import BnnModel, OutputLayer, ThresholdVec
from .errors import BadMagicError, FormatError, TruncatedFileError
from .protect import ProtectedLayer, ProtectedModel, SchemeId

MODEL_MAGIC = b"BNNM"
PROTECTED_MAGIC = b"BNNP"
VERSION = 1

_SIGN_LAYER = 0
_OUTPUT_LAYER = 1


def _write_layer(fh, kind: int, w: BinWeightMatrix, values: np.ndarray):
    fh.write(struct.pack("<BII", kind, w.rows, w.cols))
    fh.write(w.col_words.astype("<u8").tobytes())
    fh.write(values.astype("<i4").tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedFileError(f"{what}: expected {count} bytes, got {len(data)}")
    return data


def _read_layer(fh):
    kind, m, n = struct.unpack("<BII", _read_exact(fh, 9, "layer header"))
    if kind not in (_SIGN_LAYER, _OUTPUT_LAYER):
        raise FormatError(f"unknown layer type byte {kind}")
    nwords = n * words_needed(m)
    words = np.frombuffer(_read_exact(fh, 8 * nwords, "column bits"), dtype="<u8")
    values = np.frombuffer(_read_exact(fh, 4 * n, "layer values"), dtype="<i4")
    try:
        w = BinWeightMatrix(m, n, words.reshape(n, words_needed(m)).astype(np.uint64))
    except ValueError as exc:
        raise FormatError(f"invalid layer payload: {exc}")
    return kind, w, values.astype(np.int32)


def _write_model_payload(fh, model: BnnModel):
    fh.write(MODEL_MAGIC)
    fh.write(struct.pack("<II", VERSION, len(model.layers) + 1))
    for w, b in model.layers:
        _write_layer(fh, _SIGN_LAYER, w, b.values)
    _write_layer(fh, _OUTPUT_LAYER, model.output_layer.weights, model.output_layer.bias)


def _read_model_payload(fh) -> BnnModel:
    magic = _read_exact(fh, 4, "magic")
    if magic != MODEL_MAGIC:
        raise BadMagicError(f"expected {MODEL_MAGIC!r}, got {magic!r}")
    version, n_layers = struct.unpack("<II", _read_exact(fh, 8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported model version {version}")
    if n_layers < 2:
        raise FormatError("model needs at least one sign layer and one output layer")
    layers = []
    output = None
    for i in range(n_layers):
        kind, w, values = _read_layer(fh)
        try:
            if kind == _OUTPUT_LAYER:
                if i != n_layers - 1:
                    raise FormatError("output layer must be last")
                output = OutputLayer(w, values)
            else:
                layers.append((w, ThresholdVec(values)))
        except FormatError:
            raise
        except ValueError as exc:
            raise FormatError(f"invalid layer values: {exc}")
    if output is None:
        raise FormatError("missing output layer")
    try:
        return BnnModel(layers, output)
    except ValueError as exc:
        raise FormatError(f"inconsistent model: {exc}")


def write_model(model: BnnModel, path):
    """Serialize a plain model as BNNM1."""
    with open(path, "wb") as fh:
        _write_model_payload(fh, model)


def read_model(path) -> BnnModel:
    """Parse a BNNM1 file."""
    with open(path, "rb") as fh:
        model = _read_model_payload(fh)
        if fh.read(1):
            raise FormatError("trailing bytes after model payload")
        return model


def model_bytes(model: BnnModel) -> bytes:
    buf = io.BytesIO()
    _write_model_payload(buf, model)
    return buf.getvalue()


def write_protected(pm: ProtectedModel, path):
    """Serialize a protected model as BNNP1."""
    with open(path, "wb") as fh:
        fh.write(PROTECTED_MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(pm.challenge)))
        fh.write(pm.challenge)
        fh.write(struct.pack("<BI", int(pm.reuse), len(pm.layers)))
        for pl, bits in zip(pm.layers, pm.key_bits):
            fh.write(struct.pack("<BI", pl.scheme.value, bits))
        inner = BnnModel([(pl.w_star, pl.b_star) for pl in pm.layers], pm.output_layer)
        _write_model_payload(fh, inner)


def read_protected(path) -> ProtectedModel:
    """Parse a BNNP1 file."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != PROTECTED_MAGIC:
            raise BadMagicError(f"expected {PROTECTED_MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise FormatError(f"unsupported protected-model version {version}")
        (challenge_len,) = struct.unpack("<I", _read_exact(fh, 4, "challenge length"))
        challenge = _read_exact(fh, challenge_len, "challenge")
        reuse, n_layers = struct.unpack("<BI", _read_exact(fh, 5, "scheme header"))
        metas = [
            struct.unpack("<BI", _read_exact(fh, 5, "layer scheme"))
            for _ in range(n_layers)
        ]
        inner = _read_model_payload(fh)
        if fh.read(1):
            raise FormatError("trailing bytes after protected payload")
    if len(inner.layers) != n_layers:
        raise FormatError(
            f"scheme table lists {n_layers} layers, payload has {len(inner.layers)}"
        )
    layers = []
    for (tag, _bits), (w, b) in zip(metas, inner.layers):
        try:
            scheme = SchemeId(tag)
        except ValueError:
            raise FormatError(f"unknown scheme tag {tag}")
        layers.append(ProtectedLayer(w, b, scheme))
    return ProtectedModel(
        layers, inner.output_layer, challenge,
        reuse=bool(reuse), key_bits=tuple(bits for _, bits in metas),
    )
