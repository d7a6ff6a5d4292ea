"""Brute-force reference computations for tests.

Nothing here imports the rest of the package: the point of these routines
is to be slow, literal and independent.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

MAX_QUADRATURE_POINTS = 500
MAX_QUADRATURE_DEPTH = 3
MAX_SHUFFLE_DEGREE = 6
MAX_FD_ORDER = 3


class OracleCapError(ValueError):
    """Input exceeds the size an oracle is willing to brute-force."""


@dataclass
class SampledPath:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.values = np.asarray(self.values, dtype=float).reshape(self.times.size, -1)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must be strictly increasing")


def riemann_iterated(path: SampledPath, word: Sequence[int]) -> float:
    """``int_{u1 < ... < un} dX^{k1}_{u1} ... dX^{kn}_{un}`` by nested left-point sums (letters 1-based)."""
    word = tuple(word)
    if len(word) > MAX_QUADRATURE_DEPTH:
        raise OracleCapError(f"words longer than {MAX_QUADRATURE_DEPTH} are not supported")
    if path.times.size > MAX_QUADRATURE_POINTS:
        raise OracleCapError(f"at most {MAX_QUADRATURE_POINTS} sample points")
    if not word:
        return 1.0
    steps = np.diff(path.values, axis=0)
    # running[j] = iterated integral of the prefix over [t_0, t_j]
    running = np.ones(path.times.size)
    for letter in word:
        dx = steps[:, letter - 1]
        nxt = np.zeros(path.times.size)
        for j in range(1, path.times.size):
            nxt[j] = nxt[j - 1] + running[j - 1] * dx[j - 1]
        running = nxt
    return float(running[-1])


def _shuffle_pair(u: tuple, v: tuple) -> dict[tuple, int]:
    n, m = len(u), len(v)
    if n + m > MAX_SHUFFLE_DEGREE:
        raise OracleCapError(f"total degree above {MAX_SHUFFLE_DEGREE}")
    letters = u + v
    out: dict[tuple, int] = {}
    for sigma in itertools.permutations(range(n + m)):
        if any(sigma[i] > sigma[i + 1] for i in range(n - 1)):
            continue
        if any(sigma[i] > sigma[i + 1] for i in range(n, n + m - 1)):
            continue
        word = [None] * (n + m)
        for i, pos in enumerate(sigma):
            word[pos] = letters[i]
        key = tuple(word)
        out[key] = out.get(key, 0) + 1
    return out


def brute_shuffle(a: Mapping[Sequence[int], object], b: Mapping[Sequence[int], object]) -> dict[tuple, object]:
    """Shuffle product of word-indexed series by filtering all permutations."""
    out: dict[tuple, object] = {}
    for u, x in a.items():
        for v, y in b.items():
            if x == 0 or y == 0:
                continue
            for w, count in _shuffle_pair(tuple(u), tuple(v)).items():
                out[w] = out.get(w, 0) + count * x * y
    return {w: c for w, c in out.items() if c != 0}


def fd_jet(f: Callable[[np.ndarray], np.ndarray], x, word: Sequence[int], h: float | None = None) -> np.ndarray:
    """``d_{k1} ... d_{kn} f(x)`` by nested central differences (letters 1-based).

    The default step balances truncation against rounding for the order.
    """
    word = tuple(word)
    if len(word) > MAX_FD_ORDER:
        raise OracleCapError(f"derivatives above order {MAX_FD_ORDER} are not supported")
    if h is None:
        h = np.finfo(float).eps ** (1.0 / (len(word) + 2))
    x = np.asarray(x, dtype=float)
    if not word:
        return np.asarray(f(x), dtype=float)
    letter, rest = word[0], word[1:]
    step = np.zeros_like(x)
    step[letter - 1] = h
    return (fd_jet(f, x + step, rest, h) - fd_jet(f, x - step, rest, h)) / (2 * h)

