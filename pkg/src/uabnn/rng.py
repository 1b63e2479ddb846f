"""Portable counter-based random streams.

Every stream is addressed by a 64-bit key and a sample index, so value ``i``
never depends on how many values were drawn before it.  The algorithm is
plain SplitMix64, which is easy to reproduce in any language:

    GAMMA = 0x9E3779B97F4A7C15
    bits(key, i) = fmix(key + (i + 1) * GAMMA)          (mod 2**64)
    fmix(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

Uniforms are ``((bits >> 11) + 0.5) * 2**-53`` (open interval (0, 1)).
Standard normal ``i`` uses the Box-Muller cosine branch on the uniforms at
counters ``2i`` and ``2i + 1``.

Keys are derived with :func:`derive_key`: starting from the seed, each label
is folded in as ``key = fmix(key ^ label_bits)`` where integers contribute
their value mod 2**64 and strings contribute the first 8 bytes
(little-endian) of their BLAKE2b digest.
"""

from __future__ import annotations

import hashlib

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _fmix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _fmix_int(z: int) -> int:
    return int(_fmix(np.array([z & _MASK], dtype=np.uint64))[0])


def _label_bits(label) -> int:
    if isinstance(label, (bool, np.bool_)):
        return int(label)
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK
    if isinstance(label, str):
        return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")
    raise TypeError(f"unsupported key label type: {type(label).__name__}")


def derive_key(seed: int, *labels) -> int:
    """Fold ``labels`` into ``seed`` and return a 64-bit stream key."""
    key = _fmix_int(int(seed) & _MASK)
    for label in labels:
        key = _fmix_int(key ^ _label_bits(label))
    return key


def random_bits(key: int, start: int, count: int) -> np.ndarray:
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _fmix(np.uint64(key & _MASK) + idx * GAMMA)


def uniforms(key: int, count: int, start: int = 0) -> np.ndarray:
    bits = random_bits(key, start, count)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(key: int, count: int, start: int = 0) -> np.ndarray:
    """Standard normals ``start .. start + count - 1`` of the stream ``key``."""
    u = uniforms(key, 2 * count, 2 * start)
    u1, u2 = u[0::2], u[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def numpy_generator(seed: int, *labels) -> np.random.Generator:
    """A PCG64 generator keyed by ``derive_key(seed, *labels)``.

    Used where order-dependent draws are fine (batch shuffling, training noise).
    """
    return np.random.Generator(np.random.PCG64(derive_key(seed, *labels)))
