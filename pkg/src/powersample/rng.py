"""Deterministic, label-addressed random streams.

Every stochastic routine in this package draws from a stream addressed by
a master seed plus a path of labels (purpose tag and integer indices).
Streams are backed by the counter-based Philox generator, so two runs with
the same master seed and the same label structure produce identical draws
no matter how the work is scheduled or parallelised.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["RandomStreams", "sample_categorical", "sample_categorical_rows"]

_MASK64 = (1 << 64) - 1


def _mix64(state: int, value: int) -> int:
    """One splitmix64-style absorption round; folds `value` into `state`."""
    state = (state + 0x9E3779B97F4A7C15 + (value & _MASK64)) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _label_word(label: str | int) -> int:
    if isinstance(label, str):
        # crc32 keeps string tags platform-stable; offset avoids colliding
        # with small integer indices.
        return (zlib.crc32(label.encode("utf-8")) + (1 << 40)) & _MASK64
    return int(label) & _MASK64


class RandomStreams:
    """Factory of independent generators keyed by (master_seed, label path).

    A stream address is the master seed followed by the labels of every
    `child` hop plus the labels given to `generator`.  Distinct addresses
    yield statistically independent Philox streams.
    """

    def __init__(self, master_seed: int, _path: tuple[int, ...] = ()):
        self.master_seed = int(master_seed)
        self._path = _path

    def child(self, *labels: str | int) -> "RandomStreams":
        """Scope a sub-namespace, e.g. one per sampled sequence."""
        return RandomStreams(
            self.master_seed, self._path + tuple(_label_word(l) for l in labels)
        )

    def generator(self, *labels: str | int) -> np.random.Generator:
        """Return a fresh Philox generator for the given label address."""
        words = self._path + tuple(_label_word(l) for l in labels)
        lo = _mix64(self.master_seed & _MASK64, 0x243F6A8885A308D3)
        hi = _mix64((self.master_seed >> 64) ^ 0x13198A2E03707344, lo)
        for w in words:
            lo = _mix64(lo, w)
            hi = _mix64(hi, ~w & _MASK64)
        key = np.array([lo, hi], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"RandomStreams(master_seed={self.master_seed}, path={self._path})"


def sample_categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw one index from a probability vector via inverse CDF.

    Uses only raw uniforms so the draw depends on nothing but the stream
    and the vector itself.  Entries with zero probability are never chosen.
    """
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(probs) - 1))


def sample_categorical_rows(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """Row-wise inverse-CDF draw: probs is (N, V), returns (N,) int indices."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)
