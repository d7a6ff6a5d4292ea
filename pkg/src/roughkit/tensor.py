"""Truncated tensor algebra over a finite alphabet.

A :class:`TensorSeries` stores level ``n`` as a flat array of length ``d**n``
indexed by words in lexicographic order. Two scalar kinds are supported:
``"rational"`` (object arrays of :class:`fractions.Fraction`) for exact
identities and ``"float"`` (float64) for analytic pipelines.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import words as W
from .words import Word

RATIONAL = "rational"
FLOAT = "float"


class ScalarKindError(TypeError):
    """Raised when rational and float series are combined."""


def _zero(kind: str):
    return Fraction(0) if kind == RATIONAL else 0.0


def _convert(x, kind: str):
    if kind == RATIONAL:
        if isinstance(x, float):
            return Fraction(x)
        return Fraction(x)
    return float(x)


def _zeros(n: int, kind: str) -> np.ndarray:
    if kind == RATIONAL:
        out = np.empty(n, dtype=object)
        out[:] = [Fraction(0)] * n
        return out
    return np.zeros(n)


def word_index(word: Word, d: int) -> int:
    idx = 0
    for letter in word:
        idx = idx * d + (letter - 1)
    return idx


def index_word(idx: int, d: int, n: int) -> Word:
    letters = []
    for _ in range(n):
        idx, r = divmod(idx, d)
        letters.append(r + 1)
    return tuple(reversed(letters))


class TensorSeries:
    """Element of the tensor algebra truncated at level ``N`` over ``1..d``."""

    __slots__ = ("d", "N", "kind", "levels")

    def __init__(self, d: int, N: int, levels: Sequence | None = None, kind: str = FLOAT):
        if kind not in (RATIONAL, FLOAT):
            raise ValueError(f"unknown scalar kind {kind!r}")
        if d < 1 or N < 0:
            raise ValueError("need d >= 1 and N >= 0")
        self.d, self.N, self.kind = int(d), int(N), kind
        if levels is None:
            self.levels = [_zeros(d**n, kind) for n in range(N + 1)]
        else:
            if len(levels) != N + 1:
                raise ValueError(f"expected {N + 1} levels, got {len(levels)}")
            self.levels = []
            for n, lev in enumerate(levels):
                arr = np.asarray(lev, dtype=object if kind == RATIONAL else float).reshape(-1)
                if arr.size != d**n:
                    raise ValueError(f"level {n} has {arr.size} entries, expected {d**n}")
                if kind == RATIONAL:
                    arr = np.array([_convert(x, kind) for x in arr] or [], dtype=object)
                    if arr.size == 0:
                        arr = _zeros(0, kind)
                self.levels.append(arr)

    # construction ------------------------------------------------------------

    @classmethod
    def zero(cls, d: int, N: int, kind: str = FLOAT) -> "TensorSeries":
        return cls(d, N, kind=kind)

    @classmethod
    def unit(cls, d: int, N: int, kind: str = FLOAT) -> "TensorSeries":
        out = cls(d, N, kind=kind)
        out.levels[0][0] = _convert(1, kind)
        return out

    @classmethod
    def from_words(cls, d: int, N: int, coeffs: Mapping[Sequence[int], object], kind: str = FLOAT) -> "TensorSeries":
        out = cls(d, N, kind=kind)
        for word, value in coeffs.items():
            out[tuple(word)] = value
        return out

    @classmethod
    def letter(cls, d: int, N: int, i: int, kind: str = FLOAT) -> "TensorSeries":
        return cls.from_words(d, N, {(i,): 1}, kind)

    def copy(self) -> "TensorSeries":
        return TensorSeries._raw(self.d, self.N, self.kind, [lev.copy() for lev in self.levels])

    @classmethod
    def _raw(cls, d, N, kind, levels) -> "TensorSeries":
        out = cls.__new__(cls)
        out.d, out.N, out.kind, out.levels = d, N, kind, levels
        return out

    def to_kind(self, kind: str) -> "TensorSeries":
        if kind == self.kind:
            return self.copy()
        if kind == FLOAT:
            return TensorSeries._raw(self.d, self.N, kind, [np.array([float(x) for x in lev]) for lev in self.levels])
        return TensorSeries(self.d, self.N, [[Fraction(float(x)) for x in lev] for lev in self.levels], kind)

    def truncate(self, N: int) -> "TensorSeries":
        if N > self.N:
            levels = [lev.copy() for lev in self.levels] + [_zeros(self.d**n, self.kind) for n in range(self.N + 1, N + 1)]
        else:
            levels = [lev.copy() for lev in self.levels[: N + 1]]
        return TensorSeries._raw(self.d, N, self.kind, levels)

    # access ------------------------------------------------------------------

    def __getitem__(self, word: Sequence[int]):
        word = tuple(word)
        if len(word) > self.N:
            return _zero(self.kind)
        W.check_alphabet(word, self.d)
        return self.levels[len(word)][word_index(word, self.d)]

    def __setitem__(self, word: Sequence[int], value) -> None:
        word = tuple(word)
        if len(word) > self.N:
            raise IndexError(f"word {word} longer than truncation level {self.N}")
        W.check_alphabet(word, self.d)
        self.levels[len(word)][word_index(word, self.d)] = _convert(value, self.kind)

    def level(self, n: int) -> np.ndarray:
        """Level ``n`` as a ``(d,)*n`` array."""
        return self.levels[n].reshape((self.d,) * n)

    def items(self, nonzero: bool = True) -> Iterable[tuple[Word, object]]:
        for n, lev in enumerate(self.levels):
            for idx, value in enumerate(lev):
                if not nonzero or value != 0:
                    yield index_word(idx, self.d, n), value

    def to_dict(self) -> dict[Word, object]:
        return dict(self.items())

    # arithmetic --------------------------------------------------------------

    def _check(self, other: "TensorSeries") -> None:
        if not isinstance(other, TensorSeries):
            raise TypeError(f"expected TensorSeries, got {type(other).__name__}")
        if other.kind != self.kind:
            raise ScalarKindError(f"cannot mix {self.kind} and {other.kind} series")
        if (other.d, other.N) != (self.d, self.N):
            raise ValueError(f"shape mismatch: (d={self.d}, N={self.N}) vs (d={other.d}, N={other.N})")

    def __add__(self, other: "TensorSeries") -> "TensorSeries":
        self._check(other)
        return TensorSeries._raw(self.d, self.N, self.kind, [a + b for a, b in zip(self.levels, other.levels)])

    def __sub__(self, other: "TensorSeries") -> "TensorSeries":
        self._check(other)
        return TensorSeries._raw(self.d, self.N, self.kind, [a - b for a, b in zip(self.levels, other.levels)])

    def __neg__(self) -> "TensorSeries":
        return TensorSeries._raw(self.d, self.N, self.kind, [-a for a in self.levels])

    def scale(self, c) -> "TensorSeries":
        c = _convert(c, self.kind)
        return TensorSeries._raw(self.d, self.N, self.kind, [a * c for a in self.levels])

    def __mul__(self, c) -> "TensorSeries":
        return self.scale(c)

    __rmul__ = __mul__

    def __matmul__(self, other: "TensorSeries") -> "TensorSeries":
        return concat_mul(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorSeries):
            return NotImplemented
        if (self.d, self.N, self.kind) != (other.d, other.N, other.kind):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.levels, other.levels))

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(lev.astype(float)))) if lev.size else 0.0) for lev in self.levels)

    def distance(self, other: "TensorSeries", start: int = 0) -> float:
        """Largest coefficient difference over levels ``start..N``."""
        if (other.d, other.N) != (self.d, self.N):
            raise ValueError("shape mismatch")
        diffs = [np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) for a, b in zip(self.levels[start:], other.levels[start:])]
        return max((float(x.max()) for x in diffs if x.size), default=0.0)

    def __repr__(self) -> str:
        terms = ", ".join(f"{w}: {v}" for w, v in itertools.islice(self.items(), 12))
        return f"TensorSeries(d={self.d}, N={self.N}, kind={self.kind}, {{{terms}}})"

    # serialization -----------------------------------------------------------

    def to_json_obj(self) -> dict:
        if self.kind == RATIONAL:
            levels = [[str(x) for x in lev] for lev in self.levels]
        else:
            levels = [[float(x) for x in lev] for lev in self.levels]
        return {"d": self.d, "N": self.N, "kind": self.kind, "levels": levels}

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "TensorSeries":
        kind = obj.get("kind", FLOAT)
        if kind == RATIONAL:
            levels = [[Fraction(x) for x in lev] for lev in obj["levels"]]
        else:
            levels = obj["levels"]
        return cls(int(obj["d"]), int(obj["N"]), levels, kind)

    @classmethod
    def from_json(cls, text: str) -> "TensorSeries":
        return cls.from_json_obj(json.loads(text))


class MultiTensor:
    """Sparse element of an m-fold external tensor power, keyed by m-tuples of words."""

    __slots__ = ("arity", "N", "entries")

    def __init__(self, arity: int, N: int, entries: Mapping[tuple[Word, ...], object] | None = None):
        if arity < 1:
            raise ValueError("arity must be at least 1")
        self.arity, self.N = arity, N
        self.entries: dict[tuple[Word, ...], object] = {}
        for key, value in (entries or {}).items():
            self.add(key, value)

    def add(self, key: Sequence[Sequence[int]], value) -> None:
        key = tuple(tuple(w) for w in key)
        if len(key) != self.arity:
            raise ValueError(f"key {key} has arity {len(key)}, expected {self.arity}")
        if any(len(w) > self.N for w in key):
            return
        total = self.entries.get(key, 0) + value
        if total == 0:
            self.entries.pop(key, None)
        else:
            self.entries[key] = total

    def __getitem__(self, key):
        return self.entries.get(tuple(tuple(w) for w in key), 0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultiTensor):
            return NotImplemented
        return self.arity == other.arity and self.entries == other.entries

    def __sub__(self, other: "MultiTensor") -> "MultiTensor":
        out = MultiTensor(self.arity, max(self.N, other.N), self.entries)
        for key, value in other.entries.items():
            out.add(key, -value)
        return out

    def scale(self, c) -> "MultiTensor":
        return MultiTensor(self.arity, self.N, {k: c * v for k, v in self.entries.items()})

    def max_abs(self) -> float:
        return max((abs(float(v)) for v in self.entries.values()), default=0.0)

    def pair(self, *factors: TensorSeries):
        """Pairing against the external product of ``factors``."""
        if len(factors) != self.arity:
            raise ValueError("need one factor per slot")
        total = 0
        for key, value in self.entries.items():
            term = value
            for word, f in zip(key, factors):
                term = term * f[word]
            total = total + term
        return total

    def __repr__(self) -> str:
        return f"MultiTensor(arity={self.arity}, N={self.N}, nnz={len(self.entries)})"


# products --------------------------------------------------------------------


def concat_mul(a: TensorSeries, b: TensorSeries) -> TensorSeries:
    """Truncated concatenation product."""
    a._check(b)
    levels = []
    for n in range(a.N + 1):
        acc = None
        for k in range(n + 1):
            x, y = a.levels[k], b.levels[n - k]
            term = np.multiply.outer(x, y).reshape(-1)
            acc = term if acc is None else acc + term
        levels.append(acc)
    return TensorSeries._raw(a.d, a.N, a.kind, levels)


@lru_cache(maxsize=None)
def _shuffle_axes(p: int, q: int, ordered: bool) -> tuple[tuple[int, ...], ...]:
    """For each (ordered) shuffle of (p, q), the axis order realizing it on a p+q tensor."""
    perms = W.ordered_shuffles((p, q), cap=p + q) if ordered else W.shuffles((p, q), cap=p + q)
    return tuple(tuple(r - 1 for r in W.invert_perm(s)) for s in perms)


def _interleave_levels(a: TensorSeries, b: TensorSeries, ordered: bool) -> TensorSeries:
    a._check(b)
    d, N = a.d, a.N
    out = TensorSeries.zero(d, N, a.kind)
    lo = 1 if ordered else 0
    for p in range(lo, N + 1):
        for q in range(lo, N + 1 - p):
            outer = np.multiply.outer(a.levels[p], b.levels[q]).reshape((d,) * (p + q))
            acc = out.levels[p + q].reshape((d,) * (p + q))
            for axes in _shuffle_axes(p, q, ordered):
                acc = acc + np.transpose(outer, axes)
            out.levels[p + q] = np.asarray(acc, dtype=out.levels[p + q].dtype).reshape(-1)
    return out


def shuffle_mul(a: TensorSeries, b: TensorSeries) -> TensorSeries:
    """Shuffle product."""
    return _interleave_levels(a, b, ordered=False)


def ordered_shuffle_mul(a: TensorSeries, b: TensorSeries) -> TensorSeries:
    """Ordered (half) shuffle: the last letter of each output word comes from ``b``.

    Only positive-degree parts contribute.
    """
    return _interleave_levels(a, b, ordered=True)


def ordered_shuffle_chain(*factors: TensorSeries) -> TensorSeries:
    """Left-to-right iterate ``((a1 o a2) o a3) ...`` of the ordered shuffle."""
    out = factors[0]
    for f in factors[1:]:
        out = ordered_shuffle_mul(out, f)
    return out


# coproducts ------------------------------------------------------------------


def deconcat(a: TensorSeries, m: int = 2) -> MultiTensor:
    """Iterated deconcatenation: all ways of cutting each word into ``m`` pieces."""
    if m < 1:
        raise ValueError("m must be at least 1")
    out = MultiTensor(m, a.N)
    for word, value in a.items():
        n = len(word)
        for cuts in itertools.combinations_with_replacement(range(n + 1), m - 1):
            bounds = (0, *cuts, n)
            out.add(tuple(word[bounds[h] : bounds[h + 1]] for h in range(m)), value)
    return out


def shuffle_coproduct(a: TensorSeries, m: int = 2, reduced: bool = False) -> MultiTensor:
    """Iterated (reduced) unshuffle coproduct."""
    if m < 1:
        raise ValueError("m must be at least 1")
    out = MultiTensor(m, a.N)
    for word, value in a.items():
        for parts, mult in W.unshuffle(word, m, cap=max(len(word), 0)).items():
            if reduced and any(len(p) == 0 for p in parts):
                continue
            out.add(parts, mult * value)
    return out


def ordered_shuffle_coproduct(a: TensorSeries, m: int = 2, reduced: bool = False) -> MultiTensor:
    """Iterated ordered unshuffle coproduct, iterated from the left.

    In the unreduced version empty blocks are allowed and dropped from the
    ordering constraint.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    out = MultiTensor(m, a.N)
    for word, value in a.items():
        if reduced:
            parts_ms = W.ordered_unshuffle(word, m, cap=len(word))
        else:
            parts_ms = _ordered_unshuffle_with_empty(word, m)
        for parts, mult in parts_ms.items():
            out.add(parts, mult * value)
    return out


def _ordered_unshuffle_with_empty(word: Word, m: int) -> Counter:
    out: Counter = Counter()
    for chosen in range(0, m + 1):
        for slots in itertools.combinations(range(m), chosen):
            for parts, mult in W.ordered_unshuffle(word, chosen, cap=len(word)).items():
                full: list[Word] = [()] * m
                for s, p in zip(slots, parts):
                    full[s] = p
                out[tuple(full)] += mult
    return out


def permute_slots(M: MultiTensor, pi: Sequence[int]) -> MultiTensor:
    """Reorder the slots of a multi-tensor: new slot h holds old slot ``pi(h)``."""
    out = MultiTensor(M.arity, M.N)
    for key, value in M.entries.items():
        out.add(W.apply_perm(pi, key), value)
    return out


def symmetrize_slots(M: MultiTensor) -> MultiTensor:
    """Average of a multi-tensor over all permutations of its slots."""
    m = M.arity
    acc = MultiTensor(m, M.N)
    for pi in itertools.permutations(range(1, m + 1)):
        for key, value in permute_slots(M, pi).entries.items():
            acc.add(key, value)
    fact = math.factorial(m)
    return MultiTensor(m, M.N, {k: (Fraction(v, fact) if isinstance(v, (int, Fraction)) else v / fact) for k, v in acc.entries.items()})


def symmetrize(block: np.ndarray) -> np.ndarray:
    """Symmetric part of a level block given as a ``(d,)*n`` array."""
    n = block.ndim
    if n <= 1:
        return block.copy()
    acc = None
    for perm in itertools.permutations(range(n)):
        t = np.transpose(block, perm)
        acc = t if acc is None else acc + t
    fact = math.factorial(n)
    if acc.dtype == object:
        return np.vectorize(lambda x: Fraction(x) / fact, otypes=[object])(acc)
    return acc / fact


def symmetrize_series(a: TensorSeries) -> TensorSeries:
    out = a.copy()
    for n in range(a.N + 1):
        out.levels[n] = symmetrize(a.level(n)).reshape(-1)
    return out


def pair(a: TensorSeries, b: TensorSeries):
    """Coefficientwise contraction of two series of the same shape."""
    a._check(b)
    total = _zero(a.kind)
    for x, y in zip(a.levels, b.levels):
        total = total + np.dot(x, y) if x.size else total
    return total


# exp / log -------------------------------------------------------------------


def tensor_exp(a: TensorSeries) -> TensorSeries:
    """Truncated exponential of a series with vanishing constant term."""
    if a[()] != 0:
        raise ValueError("exp requires a zero degree-0 term")
    out = TensorSeries.unit(a.d, a.N, a.kind)
    power = TensorSeries.unit(a.d, a.N, a.kind)
    for k in range(1, a.N + 1):
        power = concat_mul(power, a)
        coeff = Fraction(1, math.factorial(k)) if a.kind == RATIONAL else 1.0 / math.factorial(k)
        out = out + power.scale(coeff)
    return out


def tensor_log(a: TensorSeries) -> TensorSeries:
    """Truncated logarithm of a series with unit constant term."""
    if a[()] != 1:
        raise ValueError("log requires a degree-0 term equal to 1")
    x = a - TensorSeries.unit(a.d, a.N, a.kind)
    out = TensorSeries.zero(a.d, a.N, a.kind)
    power = TensorSeries.unit(a.d, a.N, a.kind)
    for k in range(1, a.N + 1):
        power = concat_mul(power, x)
        coeff = Fraction((-1) ** (k + 1), k) if a.kind == RATIONAL else (-1) ** (k + 1) / k
        out = out + power.scale(coeff)
    return out


def tensor_inverse(a: TensorSeries) -> TensorSeries:
    """Inverse for the concatenation product of a series with unit constant term."""
    if a[()] != 1:
        raise ValueError("inverse requires a degree-0 term equal to 1")
    x = TensorSeries.unit(a.d, a.N, a.kind) - a
    out = TensorSeries.unit(a.d, a.N, a.kind)
    power = TensorSeries.unit(a.d, a.N, a.kind)
    for _ in range(a.N):
        power = concat_mul(power, x)
        out = out + power
    return out


def unshuffle_block(a: TensorSeries, p: int, q: int) -> np.ndarray:
    """The ``(d**p, d**q)`` matrix of sums of ``a^k`` over shuffles ``k`` of ``(i, j)``."""
    d = a.d
    block = a.levels[p + q].reshape((d,) * (p + q))
    acc = None
    for axes in _shuffle_axes(p, q, False):
        t = np.transpose(block, np.argsort(axes))
        acc = t if acc is None else acc + t
    return acc.reshape(d**p, d**q)


def is_grouplike(a: TensorSeries, tol: float = 0.0) -> dict:
    """Largest violation of ``a^i a^j = sum over shuffles k of (i, j) of a^k``, ``|i|+|j| <= N``.

    Returns ``{"defect", "worst", "unit_defect", "passed"}``; exact in rational mode.
    """
    unit_defect = abs(a[()] - 1)
    defect, worst = _zero(a.kind), None
    for p in range(1, a.N + 1):
        for q in range(p, a.N + 1 - p):
            lhs = np.multiply.outer(a.levels[p], a.levels[q])
            err = np.abs(lhs - unshuffle_block(a, p, q))
            flat = int(np.argmax(err.astype(float)))
            r, c = divmod(flat, err.shape[1])
            if err[r, c] > defect:
                defect, worst = err[r, c], (index_word(r, a.d, p), index_word(c, a.d, q))
    total = max(defect, unit_defect)
    return {"defect": total, "worst": worst, "unit_defect": unit_defect, "passed": bool(total <= tol)}


def _level_only(a: TensorSeries, n: int) -> TensorSeries:
    out = TensorSeries.zero(a.d, a.N, a.kind)
    out.levels[n] = a.levels[n].copy()
    return out


# Lyndon words ----------------------------------------------------------------


def is_lyndon(word: Sequence[int]) -> bool:
    word = tuple(word)
    if not word:
        return False
    return all(word < word[k:] + word[:k] for k in range(1, len(word)))


def lyndon_words(d: int, N: int) -> list[Word]:
    """Lyndon words over ``1..d`` of length ``1..N`` (Duval's algorithm), graded then lexicographic."""
    found: list[Word] = []
    word = [0]
    while word:
        word[-1] += 1
        found.append(tuple(word))
        m = len(word)
        while len(word) < N:
            word.append(word[len(word) - m])
        while word and word[-1] == d:
            word.pop()
    return sorted(found, key=lambda w: (len(w), w))


def lyndon_factorization(word: Sequence[int]) -> list[Word]:
    """Nonincreasing factorization into Lyndon words (Duval)."""
    s = tuple(word)
    n, i, out = len(s), 0, []
    while i < n:
        j, k = i + 1, i
        while j < n and s[k] <= s[j]:
            k = i if s[k] < s[j] else k + 1
            j += 1
        while i <= k:
            out.append(s[i : i + j - k])
            i += j - k
    return out


def _shuffle_words(*ws: Word) -> Counter:
    return W.shuffle_multiset(*ws, cap=sum(map(len, ws)))


@lru_cache(maxsize=None)
def _decompose(word: Word) -> tuple[tuple[tuple[Word, ...], Fraction], ...]:
    if is_lyndon(word):
        return (((word,), Fraction(1)),)
    factors = lyndon_factorization(word)
    norm = 1
    for mult in Counter(factors).values():
        norm *= math.factorial(mult)
    # shuffle of the factors = norm * word + lexicographically smaller words
    expansion = _shuffle_words(*factors)
    if expansion[word] != norm:
        raise AssertionError(f"unexpected leading coefficient for {word}")
    result: Counter = Counter()
    result[tuple(sorted(factors))] += Fraction(1, norm)
    for other, mult in expansion.items():
        if other == word:
            continue
        if other > word:
            raise AssertionError(f"triangularity violated: {other} > {word}")
        for mono, c in _decompose(other):
            result[mono] -= Fraction(mult, norm) * c
    return tuple(sorted((k, v) for k, v in result.items() if v != 0))


def lyndon_decompose(word: Sequence[int]) -> dict[tuple[Word, ...], Fraction]:
    """Express a word as a polynomial in shuffle products of Lyndon words.

    The result maps a sorted tuple of Lyndon words (a shuffle monomial) to its
    rational coefficient. Monomials use the nonincreasing Lyndon factorization
    divided by the factorials of repeated factors; the remaining words of the
    expansion are lexicographically smaller and are solved recursively.
    """
    word = tuple(word)
    if not word:
        return {(): Fraction(1)}
    return dict(_decompose(word))


def expand_shuffle_polynomial(poly: Mapping[tuple[Word, ...], Fraction]) -> Counter:
    """Expand a polynomial in shuffle monomials back into a linear combination of words."""
    out: Counter = Counter()
    for mono, c in poly.items():
        if not mono:
            out[()] += c
            continue
        for w, mult in _shuffle_words(*mono).items():
            out[w] += c * mult
    return Counter({k: v for k, v in out.items() if v != 0})


def geometrize(a: TensorSeries, lyndon_values: Mapping[Word, object] | None = None) -> TensorSeries:
    """The unique group-like series agreeing with ``a`` (or given values) on Lyndon words."""
    if a[()] != 1:
        raise ValueError("geometrize requires a unit constant term")
    values = {w: a[w] for w in lyndon_words(a.d, a.N)} if a.N else {}
    if lyndon_values:
        values.update({tuple(k): _convert(v, a.kind) for k, v in lyndon_values.items()})
    out = TensorSeries.unit(a.d, a.N, a.kind)
    for n in range(1, a.N + 1):
        for idx, word in enumerate(W.all_words(a.d, n)):
            total = _zero(a.kind)
            for mono, c in _decompose(word):
                term = _convert(c, a.kind)
                for lw in mono:
                    term = term * values[lw]
                total = total + term
            out.levels[n][idx] = total
    return out


def random_series(d: int, N: int, rng: np.random.Generator, kind: str = RATIONAL, unit: bool | None = None, denom: int = 6) -> TensorSeries:
    """Random series with small rational (or float) coefficients, for tests and demos."""
    out = TensorSeries.zero(d, N, kind)
    for n in range(N + 1):
        nums = rng.integers(-denom, denom + 1, size=d**n)
        if kind == RATIONAL:
            out.levels[n] = np.array([Fraction(int(x), denom) for x in nums], dtype=object)
        else:
            out.levels[n] = nums.astype(float) / denom
    if unit is not None:
        out.levels[0][0] = _convert(1 if unit else 0, kind)
    return out


# flat batched layout -----------------------------------------------------------
#
# Analytic code works with float arrays of shape (..., D) holding levels 0..N
# back to back (graded, lexicographic within a level). This keeps batches of
# signatures in single numpy arrays.


class Layout:
    """Offsets of levels ``0..N`` over ``d`` letters inside a flat vector."""

    def __init__(self, d: int, N: int):
        self.d, self.N = int(d), int(N)
        self.sizes = [self.d**n for n in range(self.N + 1)]
        self.offsets = list(itertools.accumulate([0, *self.sizes]))
        self.D = self.offsets[-1]

    def sl(self, n: int) -> slice:
        return slice(self.offsets[n], self.offsets[n + 1])

    def index(self, word: Sequence[int]) -> int:
        return self.offsets[len(word)] + word_index(tuple(word), self.d)

    def words(self) -> list[Word]:
        return W.words_up_to(self.d, self.N)

    def unit(self, batch: tuple[int, ...] = ()) -> np.ndarray:
        out = np.zeros(batch + (self.D,))
        out[..., 0] = 1.0
        return out


@lru_cache(maxsize=None)
def layout(d: int, N: int) -> Layout:
    return Layout(d, N)


def to_flat(a: TensorSeries) -> np.ndarray:
    return np.concatenate([np.asarray(lev, dtype=float) for lev in a.levels])


def from_flat(vec: np.ndarray, d: int, N: int) -> TensorSeries:
    lay = layout(d, N)
    vec = np.asarray(vec, dtype=float)
    return TensorSeries._raw(d, N, FLOAT, [vec[lay.sl(n)].copy() for n in range(N + 1)])


def flat_mul(a: np.ndarray, b: np.ndarray, lay: Layout) -> np.ndarray:
    """Batched truncated concatenation product."""
    shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    out = np.zeros(shape + (lay.D,))
    for n in range(lay.N + 1):
        acc = out[..., lay.sl(n)]
        for k in range(n + 1):
            x = a[..., lay.sl(k)]
            y = b[..., lay.sl(n - k)]
            acc += (x[..., :, None] * y[..., None, :]).reshape(shape + (lay.sizes[n],))
    return out


def flat_exp_linear(v: np.ndarray, lay: Layout) -> np.ndarray:
    """Exponential of level-1 elements ``v`` of shape (..., d)."""
    batch = v.shape[:-1]
    out = np.zeros(batch + (lay.D,))
    out[..., 0] = 1.0
    power = np.ones(batch + (1,))
    for n in range(1, lay.N + 1):
        power = (power[..., :, None] * v[..., None, :]).reshape(batch + (lay.sizes[n],)) / n
        out[..., lay.sl(n)] = power
    return out


def flat_inverse(a: np.ndarray, lay: Layout) -> np.ndarray:
    """Inverse of elements with unit constant term."""
    x = -a.copy()
    x[..., 0] = 0.0
    out = lay.unit(a.shape[:-1])
    power = lay.unit(a.shape[:-1])
    for _ in range(lay.N):
        power = flat_mul(power, x, lay)
        out += power
    return out


def flat_log(a: np.ndarray, lay: Layout) -> np.ndarray:
    x = a.copy()
    x[..., 0] = 0.0
    out = np.zeros_like(a)
    power = lay.unit(a.shape[:-1])
    for k in range(1, lay.N + 1):
        power = flat_mul(power, x, lay)
        out += ((-1) ** (k + 1) / k) * power
    return out


def flat_exp(a: np.ndarray, lay: Layout) -> np.ndarray:
    x = a.copy()
    x[..., 0] = 0.0
    out = lay.unit(a.shape[:-1])
    power = lay.unit(a.shape[:-1])
    for k in range(1, lay.N + 1):
        power = flat_mul(power, x, lay) / k
        out += power
    return out


def flat_truncate(a: np.ndarray, src: Layout, dst: Layout) -> np.ndarray:
    """Change truncation level, padding new levels with zeros."""
    out = np.zeros(a.shape[:-1] + (dst.D,))
    m = min(src.D, dst.D)
    out[..., :m] = a[..., :m]
    return out


def flat_prefix_products(a: np.ndarray, lay: Layout) -> np.ndarray:
    """Inclusive running products ``a[0] a[1] ... a[i]`` along axis 0 (log-depth scan)."""
    out = a.copy()
    n = out.shape[0]
    step = 1
    while step < n:
        out[step:] = flat_mul(out[:-step], out[step:], lay)
        step *= 2
    return out


def flat_group_products(values: np.ndarray, groups: np.ndarray, n_groups: int, lay: Layout) -> np.ndarray:
    """Ordered product of consecutive runs of ``values`` sharing a group label.

    ``groups`` must be non-decreasing. Groups without entries give the unit.
    Adjacent pairs inside each group are merged repeatedly, so the work is
    linear in the number of values.
    """
    vals = values
    gid = np.asarray(groups)
    while vals.shape[0] > 1:
        same_next = np.zeros(gid.shape[0], dtype=bool)
        same_next[:-1] = gid[:-1] == gid[1:]
        if not same_next.any():
            break
        starts = np.ones(gid.shape[0], dtype=bool)
        starts[1:] = gid[1:] != gid[:-1]
        first = np.maximum.accumulate(np.where(starts, np.arange(gid.shape[0]), 0))
        rank = np.arange(gid.shape[0]) - first
        even = rank % 2 == 0
        merge = even & same_next
        keep = even
        merged = vals[keep].copy()
        idx_keep = np.flatnonzero(keep)
        m_pos = np.flatnonzero(merge[keep])
        if m_pos.size:
            left = idx_keep[m_pos]
            merged[m_pos] = flat_mul(vals[left], vals[left + 1], lay)
        vals, gid = merged, gid[keep]
    out = lay.unit((n_groups,))
    out[gid] = vals
    return out


@lru_cache(maxsize=None)
def _geometrize_plan(d: int, N: int):
    lay = layout(d, N)
    plan = []
    for n in range(1, N + 1):
        for word in W.all_words(d, n):
            terms = [(float(c), [lay.index(lw) for lw in mono]) for mono, c in _decompose(word)]
            plan.append((lay.index(word), terms))
    return plan


def flat_geometrize(a: np.ndarray, lay: Layout) -> np.ndarray:
    """Batched float version of :func:`geometrize` (keeps Lyndon coordinates)."""
    out = np.zeros_like(a)
    out[..., 0] = 1.0
    for idx, terms in _geometrize_plan(lay.d, lay.N):
        acc = np.zeros(a.shape[:-1])
        for c, factors in terms:
            term = np.full(a.shape[:-1], c)
            for f in factors:
                term = term * a[..., f]
            acc = acc + term
        out[..., idx] = acc
    return out
