"""Words, permutations, shuffles and ordered shuffles.

Words are tuples of 1-based integer letters; the empty tuple is a valid word.
Permutations are one-line tuples ``(sigma(1), ..., sigma(n))``.
Multisets are :class:`collections.Counter` objects keyed by words (or tuples of
words) with strictly positive multiplicities.

A shuffle of blocks of sizes ``n1, ..., nm`` is a permutation increasing on each
block. It is *ordered* when the images of the block endpoints are increasing,
i.e. the last letters of the blocks appear in block order in the shuffled word.
"""

from __future__ import annotations

import itertools
import json
from collections import Counter
from functools import lru_cache
from typing import Iterable, Sequence

Word = tuple[int, ...]
Permutation = tuple[int, ...]

DEFAULT_CAP = 8
_cap = DEFAULT_CAP


class EnumerationCapError(ValueError):
    """Raised when an enumeration would exceed the configured total length."""


def get_enumeration_cap() -> int:
    return _cap


def set_enumeration_cap(cap: int) -> int:
    """Set the global total-length cap and return the previous value."""
    global _cap
    if cap < 0:
        raise ValueError("cap must be non-negative")
    previous, _cap = _cap, int(cap)
    return previous


def _check_cap(total: int, cap: int | None) -> None:
    limit = _cap if cap is None else cap
    if total > limit:
        raise EnumerationCapError(f"total length {total} exceeds enumeration cap {limit}")


def as_word(letters: Iterable[int]) -> Word:
    word = tuple(int(x) for x in letters)
    if any(x < 1 for x in word):
        raise ValueError(f"letters must be positive integers, got {word}")
    return word


def check_alphabet(word: Word, d: int) -> None:
    if any(not 1 <= x <= d for x in word):
        raise ValueError(f"word {word} has letters outside 1..{d}")


def word_to_json(word: Word) -> str:
    return json.dumps(list(word))


def word_from_json(text: str) -> Word:
    return as_word(json.loads(text))


def all_words(d: int, n: int) -> list[Word]:
    """All words of length ``n`` over ``1..d`` in lexicographic order."""
    return [tuple(w) for w in itertools.product(range(1, d + 1), repeat=n)]


def words_up_to(d: int, n: int) -> list[Word]:
    """All words of length ``0..n``, graded then lexicographic."""
    out: list[Word] = []
    for k in range(n + 1):
        out.extend(all_words(d, k))
    return out


# permutations ----------------------------------------------------------------


def _check_perm(perm: Sequence[int]) -> Permutation:
    perm = tuple(int(x) for x in perm)
    if sorted(perm) != list(range(1, len(perm) + 1)):
        raise ValueError(f"{perm} is not a permutation of 1..{len(perm)}")
    return perm


def identity_perm(n: int) -> Permutation:
    return tuple(range(1, n + 1))


def invert_perm(perm: Sequence[int]) -> Permutation:
    perm = _check_perm(perm)
    inv = [0] * len(perm)
    for k, image in enumerate(perm, start=1):
        inv[image - 1] = k
    return tuple(inv)


def compose_perms(sigma: Sequence[int], rho: Sequence[int]) -> Permutation:
    """Return ``sigma o rho``, i.e. ``k -> sigma(rho(k))``."""
    sigma, rho = _check_perm(sigma), _check_perm(rho)
    if len(sigma) != len(rho):
        raise ValueError(f"degree mismatch: {len(sigma)} vs {len(rho)}")
    return tuple(sigma[r - 1] for r in rho)


def apply_perm(rho: Sequence[int], word: Sequence) -> tuple:
    """Permute a word by ``rho``: the result is ``(w[rho(1)], ..., w[rho(n)])``.

    With this convention ``apply_perm(compose_perms(s, r), w)`` equals
    ``apply_perm(r, apply_perm(s, w))``.
    """
    rho = _check_perm(rho)
    if len(rho) != len(word):
        raise ValueError(f"length mismatch: permutation of degree {len(rho)}, word of length {len(word)}")
    return tuple(word[r - 1] for r in rho)


# shuffles --------------------------------------------------------------------


@lru_cache(maxsize=None)
def _label_sequences(sizes: tuple[int, ...], ordered: bool) -> tuple[tuple[int, ...], ...]:
    """Sequences of block labels: position q of the output belongs to block label[q].

    Each such sequence corresponds to exactly one shuffle. For ordered shuffles the
    last occurrence of each label must come after the last occurrence of the
    previous label.
    """
    remaining = list(sizes)
    total = sum(sizes)
    out: list[tuple[int, ...]] = []
    seq: list[int] = []

    def rec() -> None:
        if len(seq) == total:
            out.append(tuple(seq))
            return
        for b, left in enumerate(remaining):
            if left == 0:
                continue
            if ordered and left == 1 and any(remaining[c] > 0 for c in range(b)):
                # placing the final letter of block b before earlier blocks finish
                continue
            remaining[b] -= 1
            seq.append(b)
            rec()
            seq.pop()
            remaining[b] += 1

    rec()
    return tuple(out)


def _labels_to_perm(labels: Sequence[int], sizes: Sequence[int]) -> Permutation:
    offsets = list(itertools.accumulate([0, *sizes[:-1]]))
    counters = [0] * len(sizes)
    perm = [0] * len(labels)
    for q, b in enumerate(labels, start=1):
        perm[offsets[b] + counters[b]] = q
        counters[b] += 1
    return tuple(perm)


def _profile(profile: Sequence[int], cap: int | None) -> tuple[int, ...]:
    sizes = tuple(int(n) for n in profile)
    if any(n < 0 for n in sizes):
        raise ValueError(f"profile entries must be non-negative: {sizes}")
    _check_cap(sum(sizes), cap)
    return tuple(n for n in sizes if n > 0)


def shuffles(profile: Sequence[int], cap: int | None = None) -> list[Permutation]:
    """All permutations increasing on each block of ``profile``."""
    sizes = _profile(profile, cap)
    return sorted(_labels_to_perm(lab, sizes) for lab in _label_sequences(sizes, False))


def ordered_shuffles(profile: Sequence[int], cap: int | None = None) -> list[Permutation]:
    """Shuffles whose block endpoints are mapped in increasing order."""
    sizes = _profile(profile, cap)
    return sorted(_labels_to_perm(lab, sizes) for lab in _label_sequences(sizes, True))


def is_shuffle(perm: Sequence[int], profile: Sequence[int]) -> bool:
    perm = _check_perm(perm)
    sizes = [n for n in profile if n > 0]
    if sum(sizes) != len(perm):
        return False
    start = 0
    for n in sizes:
        block = perm[start : start + n]
        if any(a > b for a, b in zip(block, block[1:])):
            return False
        start += n
    return True


def is_ordered_shuffle(perm: Sequence[int], profile: Sequence[int]) -> bool:
    if not is_shuffle(perm, profile):
        return False
    ends = list(itertools.accumulate(n for n in profile if n > 0))
    images = [perm[e - 1] for e in ends]
    return all(a < b for a, b in zip(images, images[1:]))


# multisets of words ----------------------------------------------------------


def _interleave(words: Sequence[Word], ordered: bool, cap: int | None) -> Counter:
    words = [tuple(w) for w in words]
    _check_cap(sum(len(w) for w in words), cap)
    nonempty = [w for w in words if w]
    sizes = tuple(len(w) for w in nonempty)
    out: Counter = Counter()
    for labels in _label_sequences(sizes, ordered):
        pos = [0] * len(nonempty)
        letters = []
        for b in labels:
            letters.append(nonempty[b][pos[b]])
            pos[b] += 1
        out[tuple(letters)] += 1
    return out


def shuffle_multiset(*words: Sequence[int], cap: int | None = None) -> Counter:
    """Multiset of words obtained by shuffling the given words, one entry per shuffle."""
    return _interleave(words, False, cap)


def ordered_shuffle_multiset(*words: Sequence[int], cap: int | None = None) -> Counter:
    """Multiset of ordered shuffles of the given words (the empty word when none given)."""
    return _interleave(words, True, cap)


@lru_cache(maxsize=None)
def _unshuffle(word: Word, m: int, ordered: bool, allow_empty: bool) -> tuple[tuple[tuple[Word, ...], int], ...]:
    out: Counter = Counter()
    n = len(word)
    for labels in itertools.product(range(m), repeat=n):
        used = set(labels)
        if not allow_empty and len(used) < m:
            continue
        if ordered:
            # last occurrence of each used label must increase with the label
            last = {b: q for q, b in enumerate(labels)}
            present = sorted(last)
            if any(last[a] > last[b] for a, b in zip(present, present[1:])):
                continue
        parts = tuple(tuple(word[q] for q in range(n) if labels[q] == b) for b in range(m))
        out[parts] += 1
    return tuple(sorted(out.items()))


def unshuffle_pairs(word: Sequence[int], cap: int | None = None) -> Counter:
    """Pairs ``(i, j)`` (empty factors allowed) whose shuffles contain ``word``, with multiplicity."""
    return unshuffle(word, 2, cap=cap)


def unshuffle(word: Sequence[int], m: int, cap: int | None = None) -> Counter:
    """m-tuples of possibly empty words whose shuffle contains ``word``."""
    word = tuple(word)
    _check_cap(len(word), cap)
    if m < 1:
        raise ValueError("m must be at least 1")
    return Counter(dict(_unshuffle(word, m, False, True)))


def ordered_unshuffle(word: Sequence[int], m: int, cap: int | None = None) -> Counter:
    """m-tuples of nonempty words whose ordered shuffle contains ``word``.

    For ``m = 0`` the only tuple is ``()`` and only for the empty word.
    """
    word = tuple(word)
    _check_cap(len(word), cap)
    if m < 0:
        raise ValueError("m must be non-negative")
    if m == 0:
        return Counter({(): 1}) if not word else Counter()
    if m > len(word):
        return Counter()
    return Counter(dict(_unshuffle(word, m, True, False)))


# identities ------------------------------------------------------------------


def _splits_nonempty_tail(word: Word) -> list[tuple[Word, Word]]:
    return [(word[:c], word[c:]) for c in range(len(word))]


def ordered_compat_lhs(*words: Sequence[int], cap: int | None = None) -> Counter:
    """Pairs ``(i, j)`` with ``ij`` an ordered shuffle of the words, over all cut points."""
    out: Counter = Counter()
    for w, mult in ordered_shuffle_multiset(*words, cap=cap).items():
        for c in range(len(w) + 1):
            out[(w[:c], w[c:])] += mult
    return out


def ordered_compat_rhs(*words: Sequence[int], cap: int | None = None) -> Counter:
    """Pairs ``(i, j)`` assembled block by block from head/tail splits of each word.

    For a level ``l``, the first ``l`` words go wholly into ``i`` (ordered among
    themselves), the remaining words are cut into a head going into ``i``
    (freely shuffled) and a nonempty tail going into ``j`` (ordered).
    """
    ks = [tuple(w) for w in words]
    if any(not k for k in ks):
        raise ValueError("all words must be nonempty")
    _check_cap(sum(map(len, ks)), cap)
    m = len(ks)
    out: Counter = Counter()
    for lvl in range(m + 1):
        head = ks[:lvl]
        alphas = ordered_shuffle_multiset(*head, cap=cap)
        for cuts in itertools.product(*(_splits_nonempty_tail(k) for k in ks[lvl:])):
            tails = [t for _, t in cuts]
            heads = [h for h, _ in cuts]
            js = ordered_shuffle_multiset(*tails, cap=cap)
            betas = shuffle_multiset(*heads, cap=cap)
            for a, ma in alphas.items():
                for b, mb in betas.items():
                    for i, mi in shuffle_multiset(a, b, cap=cap).items():
                        for j, mj in js.items():
                            out[(i, j)] += ma * mb * mi * mj
    return out


def _free_unshuffle(word: Word, m: int, cap: int | None) -> Counter:
    if m == 0:
        return Counter({(): 1}) if not word else Counter()
    return unshuffle(word, m, cap=cap)


def dual_reduced_lhs(i: Sequence[int], j: Sequence[int], m: int, cap: int | None = None) -> Counter:
    return ordered_unshuffle(tuple(i) + tuple(j), m, cap=cap)


def dual_reduced_rhs(i: Sequence[int], j: Sequence[int], m: int, cap: int | None = None) -> Counter:
    """m-tuples of nonempty words built from unshuffles of ``i`` and ordered unshuffles of ``j``."""
    i, j = tuple(i), tuple(j)
    _check_cap(len(i) + len(j), cap)
    out: Counter = Counter()
    for lvl in range(m + 1):
        tails_ms = ordered_unshuffle(j, m - lvl, cap=cap)
        if not tails_ms:
            continue
        for (a, b), mab in unshuffle_pairs(i, cap=cap).items():
            for first, m1 in ordered_unshuffle(a, lvl, cap=cap).items():
                for rest, m2 in _free_unshuffle(b, m - lvl, cap).items():
                    for tails, m3 in tails_ms.items():
                        ks = first + tuple(h + t for h, t in zip(rest, tails))
                        out[ks] += mab * m1 * m2 * m3
    return out


def graded_ordered_union(
    block_sizes: Sequence[int], words: Sequence[Sequence[int]], cap: int | None = None
) -> tuple[Counter, Counter]:
    """Two independent constructions of the same multiset of words.

    The left side shuffles the ordered shuffles of consecutive groups of words;
    the right side takes the disjoint union, over shuffles ``pi`` of the group
    sizes, of ordered shuffles of the words reindexed by ``pi``.
    """
    ks = [tuple(w) for w in words]
    sizes = [int(n) for n in block_sizes]
    if any(not k for k in ks):
        raise ValueError("all words must be nonempty")
    if sum(sizes) != len(ks):
        raise ValueError("block sizes must add up to the number of words")
    _check_cap(sum(map(len, ks)), cap)

    groups, start = [], 0
    for n in sizes:
        groups.append(ks[start : start + n])
        start += n
    lhs: Counter = Counter()
    group_ms = [ordered_shuffle_multiset(*g, cap=cap) for g in groups]
    for combo in itertools.product(*(ms.items() for ms in group_ms)):
        weight = 1
        for _, mult in combo:
            weight *= mult
        for w, mult in shuffle_multiset(*(w for w, _ in combo), cap=cap).items():
            lhs[w] += weight * mult

    rhs: Counter = Counter()
    for pi in shuffles(sizes, cap=len(ks)):
        inv = invert_perm(pi)
        rhs.update(ordered_shuffle_multiset(*(ks[r - 1] for r in inv), cap=cap))
    return lhs, rhs


def multiset_to_json(ms: Counter) -> list:
    """Serialize a multiset as a sorted list of ``[key, multiplicity]`` pairs."""

    def enc(key):
        if key and isinstance(key[0], tuple):
            return [list(k) for k in key]
        return list(key)

    return [[enc(k), int(v)] for k, v in sorted(ms.items()) if v > 0]
