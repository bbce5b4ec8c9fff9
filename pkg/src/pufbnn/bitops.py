"""Bit-packed bipolar vectors and weight matrices.

Values live in {-1, +1} and are stored one bit per element: bit 1 encodes +1,
bit 0 encodes -1. Bits are packed into 64-bit words with little-endian bit
order inside each word (logical bit i sits at bit i % 64 of word i // 64),
and matrices are stored column-major so that one packed column corresponds
to one crossbar column. Padding bits past the logical length are always 0.

A bipolar dot product reduces to one XOR and one popcount per word:

    <a, b> = m - 2 * popcount(a XOR b)

which equals the textbook 2 * popcount(XNOR(a, b)) - m over the m logical
bits. The XOR form is used internally because zeroed padding bits cancel in
XOR but would need masking after XNOR.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

WORD_BITS = 64


def words_needed(nbits: int) -> int:
    """Number of 64-bit words needed to hold nbits."""
    return (nbits + WORD_BITS - 1) // WORD_BITS


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a bool array (..., nbits) into uint64 words (..., words_needed).

    Padding bits are zero. Little-endian bit order within each word.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    nbits = bits.shape[-1]
    nwords = words_needed(nbits)
    pad = nwords * WORD_BITS - nbits
    if pad:
        bits = np.concatenate(
            [bits, np.zeros(bits.shape[:-1] + (pad,), dtype=np.uint8)], axis=-1
        )
    packed = np.ascontiguousarray(np.packbits(bits, axis=-1, bitorder="little"))
    return packed.view(np.uint64).reshape(bits.shape[:-1] + (nwords,))

def unpack_bits(words: np.ndarray, nbits: int) -> np.ndarray:
    """Inverse of pack_bits; returns a bool array (..., nbits)."""
    words = np.ascontiguousarray(words, dtype=np.uint64)
    as_bytes = words.view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little")
    return bits[..., :nbits].astype(bool)


def _tail_mask(nbits: int) -> int:
    used = nbits % WORD_BITS
    if used == 0:
        return (1 << WORD_BITS) - 1
    return (1 << used) - 1


def bools_to_pm1(bits: np.ndarray) -> np.ndarray:
    """Map bool -> int8 with True -> +1, False -> -1."""
    return np.where(np.asarray(bits, dtype=bool), 1, -1).astype(np.int8)


def pm1_to_bools(values: np.ndarray) -> np.ndarray:
    """Map a {-1, +1} array to bool (+1 -> True). Rejects other values."""
    values = np.asarray(values)
    if not np.all(np.abs(values) == 1):
        raise ValueError("bipolar data must contain only -1 and +1")
    return values > 0


class BipolarVec:
    """Packed vector over {-1, +1}.

    Immutable after construction; safe to share across threads.
    """

    __slots__ = ("length", "words")

    def __init__(self, length: int, words: np.ndarray):
        if length < 1:
            raise ValueError(f"length must be positive, got {length}")
        words = np.ascontiguousarray(words, dtype=np.uint64)
        if words.shape != (words_needed(length),):
            raise ValueError(
                f"expected {words_needed(length)} words for {length} bits, "
                f"got shape {words.shape}"
            )
        if int(words[-1]) & ~_tail_mask(length) & ((1 << WORD_BITS) - 1):
            raise ValueError("padding bits beyond the logical length must be 0")
        words.setflags(write=False)
        self.length = length
        self.words = words

    @classmethod
    def from_pm1(cls, values) -> "BipolarVec":
        values = np.asarray(values)
        return cls.from_bools(pm1_to_bools(values))

    @classmethod
    def from_bools(cls, bits) -> "BipolarVec":
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 1:
            raise ValueError("expected a 1-d bit array")
        return cls(bits.shape[0], pack_bits(bits))

    def to_bools(self) -> np.ndarray:
        return unpack_bits(self.words, self.length)

    def to_pm1(self) -> np.ndarray:
        return bools_to_pm1(self.to_bools())

    def __len__(self) -> int:
        return self.length

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BipolarVec)
            and self.length == other.length
            and bool(np.array_equal(self.words, other.words))
        )

    def __hash__(self):
        return hash((self.length, self.words.tobytes()))

    def __repr__(self) -> str:
        if self.length <= 32:
            body = "".join("+" if b else "-" for b in self.to_bools())
        else:
            body = f"{self.length} bits"
        return f"BipolarVec({body})"


class BinWeightMatrix:
    """Packed m x n matrix over {-1, +1}, stored column-major.

    The row count m must be even: the sign-threshold pipeline relies on
    column sums y_k and thresholds B_k sharing parity, which requires an
    even fan-in.
    """

    __slots__ = ("rows", "cols", "col_words")

    def __init__(self, rows: int, cols: int, col_words: np.ndarray):
        if rows < 1 or cols < 1:
            raise ValueError(f"matrix dims must be positive, got {rows}x{cols}")
        if rows % 2 != 0:
            raise ValueError(f"row count must be even, got {rows}")
        col_words = np.ascontiguousarray(col_words, dtype=np.uint64)
        if col_words.shape != (cols, words_needed(rows)):
            raise ValueError(
                f"expected col_words shape {(cols, words_needed(rows))}, "
                f"got {col_words.shape}"
            )
        bad = col_words[:, -1] & np.uint64(~_tail_mask(rows) & ((1 << WORD_BITS) - 1))
        if np.any(bad):
            raise ValueError("padding bits beyond the logical length must be 0")
        col_words.setflags(write=False)
        self.rows = rows
        self.cols = cols
        self.col_words = col_words

    @classmethod
    def from_pm1(cls, matrix) -> "BinWeightMatrix":
        matrix = np.asarray(matrix)
        if matrix.ndim != 2:
            raise ValueError("expected a 2-d matrix")
        m, n = matrix.shape
        bits = pm1_to_bools(matrix)
        return cls(m, n, pack_bits(bits.T))

    @classmethod
    def from_bools(cls, bits) -> "BinWeightMatrix":
        bits = np.asarray(bits, dtype=bool)
        m, n = bits.shape
        return cls(m, n, pack_bits(bits.T))

    def to_bools(self) -> np.ndarray:
        return unpack_bits(self.col_words, self.rows).T

    def to_pm1(self) -> np.ndarray:
        return bools_to_pm1(self.to_bools())

    def column(self, k: int) -> BipolarVec:
        return BipolarVec(self.rows, self.col_words[k])

    @property
    def shape(self):
        return (self.rows, self.cols)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BinWeightMatrix)
            and self.shape == other.shape
            and bool(np.array_equal(self.col_words, other.col_words))
        )

    def __hash__(self):
        return hash((self.rows, self.cols, self.col_words.tobytes()))

    def __repr__(self) -> str:
        return f"BinWeightMatrix({self.rows}x{self.cols})"


def xnor_popcount_matvec(W: BinWeightMatrix, x: BipolarVec) -> np.ndarray:
    """Integer products y_k = sum_j W[j,k] * x[j], one per column.

    Each y_k lies in [-m, m] and has the parity of m.
    """
    if x.length != W.rows:
        raise DimensionError("matvec input", W.rows, x.length)
    mismatches = np.bitwise_count(W.col_words ^ x.words).sum(axis=1, dtype=np.int64)
    return W.rows - 2 * mismatches


def pack_pm1_batch(values: np.ndarray) -> np.ndarray:
    """Pack a batch of {-1,+1} rows (N, m) into words (N, words_needed(m))."""
    return pack_bits(pm1_to_bools(values))


_CHUNK = 2048


def xnor_popcount_matvec_batch(W: BinWeightMatrix, xwords: np.ndarray) -> np.ndarray:
    """Batched matvec: xwords is (N, words) packed rows, result is (N, n) int32.

    Bit-identical to calling xnor_popcount_matvec row by row.
    """
    xwords = np.asarray(xwords, dtype=np.uint64)
    n_samples = xwords.shape[0]
    out = np.empty((n_samples, W.cols), dtype=np.int32)
    for start in range(0, n_samples, _CHUNK):
        block = xwords[start : start + _CHUNK]
        # (B, 1, w) ^ (1, n, w) -> popcount -> sum over words
        mism = np.bitwise_count(block[:, None, :] ^ W.col_words[None, :, :]).sum(
            axis=2, dtype=np.int32
        )
        out[start : start + block.shape[0]] = W.rows - 2 * mism
    return out
