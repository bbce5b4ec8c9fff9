"""Simulated PUF and key expansion.

The physical function is modeled as a keyed PRF: a 256-bit device secret
plus HMAC-SHA256 over the challenge bytes. The secret stands in for the
device entropy, lives in a separate device file and is never packaged with
a model; only the (public) challenge travels with protected weights, so a
stolen model carries no key material.

expand_key stretches a response into per-role bit strings. Its output is
pinned bit for bit so independently written runtimes derive identical
schedules: counter-mode SplitMix64 seeded with the first 64 bits of the
response (little-endian) XOR the 64-bit FNV-1a hash of the role label,
emitting little-endian 64-bit words that are truncated to the requested
bit count.
"""

from __future__ import annotations

import hashlib
import hmac
import os

import numpy as np

RESPONSE_BITS = 256
SECRET_BYTES = 32

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MUL2 = np.uint64(0x94D049BB133111EB)


class PufDevice:
    """Holds the 256-bit device secret of one simulated PUF instance."""

    __slots__ = ("_secret",)

    def __init__(self, secret: bytes):
        if len(secret) != SECRET_BYTES:
            raise ValueError(f"device secret must be {SECRET_BYTES} bytes")
        self._secret = bytes(secret)

    @classmethod
    def generate(cls, seed: int | None = None) -> "PufDevice":
        """Fresh device from OS entropy, or deterministic from a seed."""
        if seed is None:
            return cls(os.urandom(SECRET_BYTES))
        return cls(hashlib.sha256(b"pufbnn-device:" + str(seed).encode()).digest())

    @classmethod
    def load(cls, path) -> "PufDevice":
        with open(path, "rb") as fh:
            return cls(fh.read())

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self._secret)

    def __repr__(self) -> str:
        return "PufDevice(<secret hidden>)"  # never print the secret


def puf_response(device: PufDevice, challenge: bytes) -> bytes:
    """Deterministic 256-bit response for (device, challenge).

    Changing any challenge byte flips about half the response bits.
    """
    if not challenge:
        raise ValueError("challenge must be nonempty")
    return hmac.new(device._secret, challenge, hashlib.sha256).digest()


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    acc = _FNV_OFFSET
    for byte in data:
        acc = ((acc ^ byte) * _FNV_PRIME) & _MASK64
    return acc


def splitmix64_words(seed: int, nwords: int) -> np.ndarray:
    """Counter-mode SplitMix64: word i mixes seed + (i+1)*golden."""
    counters = np.arange(1, nwords + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK64) + _SM_GAMMA * counters
    z = (z ^ (z >> np.uint64(30))) * _SM_MUL1
    z = (z ^ (z >> np.uint64(27))) * _SM_MUL2
    return z ^ (z >> np.uint64(31))


def expand_key(response: bytes, label: bytes | str, nbits: int) -> np.ndarray:
    """Pseudorandom bit string of exactly nbits, as a uint8 0/1 array.

    Distinct labels give independent streams from the same response.
    """
    if nbits < 1:
        raise ValueError("requested key length must be at least 1 bit")
    if isinstance(label, str):
        label = label.encode()
    seed = int.from_bytes(response[:8], "little") ^ fnv1a64(label)
    words = splitmix64_words(seed, (nbits + 63) // 64)
    bits = np.unpackbits(words.astype("<u8").view(np.uint8), bitorder="little")
    return bits[:nbits].copy()
