import itertools
import json
from collections import Counter
from math import comb

import pytest

from roughkit import words as W


def test_apply_perm_worked_example():
    sigma = (1, 3, 5, 2, 4)
    assert W.is_shuffle(sigma, (3, 2))
    letters = ("i1", "i2", "i3", "i4", "i5")
    assert W.apply_perm(W.invert_perm(sigma), letters) == ("i1", "i4", "i2", "i5", "i3")


def test_apply_perm_identity_and_length_check():
    assert W.apply_perm(W.identity_perm(3), (2, 1, 3)) == (2, 1, 3)
    with pytest.raises(ValueError):
        W.apply_perm((2, 1), (1, 2, 3))


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_composition_rule_on_words(n):
    word = tuple(range(10, 10 + n))
    for sigma in itertools.permutations(range(1, n + 1)):
        for rho in itertools.permutations(range(1, n + 1)):
            lhs = W.apply_perm(W.compose_perms(sigma, rho), word)
            assert lhs == W.apply_perm(rho, W.apply_perm(sigma, word))


def test_compose_perms_table_and_inverse():
    for sigma in itertools.permutations((1, 2, 3)):
        assert W.compose_perms(sigma, W.identity_perm(3)) == sigma
        assert W.compose_perms(sigma, W.invert_perm(sigma)) == (1, 2, 3)
        for rho in itertools.permutations((1, 2, 3)):
            assert W.compose_perms(sigma, rho) == tuple(sigma[rho[k] - 1] for k in range(3))
    with pytest.raises(ValueError):
        W.compose_perms((1, 2), (1, 2, 3))


def _brute(profile, ordered):
    n = sum(profile)
    out = []
    for perm in itertools.permutations(range(1, n + 1)):
        check = W.is_ordered_shuffle if ordered else W.is_shuffle
        if check(perm, profile):
            out.append(perm)
    return sorted(out)


def test_shuffle_counts():
    assert sorted(W.shuffles((1, 1))) == [(1, 2), (2, 1)]
    assert len(W.shuffles((2, 2))) == 6
    assert sorted(W.shuffles((2, 0, 1))) == sorted(W.shuffles((2, 1)))
    for n, m in [(1, 2), (2, 3), (3, 3)]:
        assert len(W.shuffles((n, m))) == comb(n + m, n)


def test_shuffles_match_filtered_permutations():
    for profile in [(2, 2), (1, 2, 1), (3, 1)]:
        assert sorted(W.shuffles(profile)) == _brute(profile, False)
        assert sorted(W.ordered_shuffles(profile)) == _brute(profile, True)


def test_ordered_shuffle_examples():
    assert W.ordered_shuffles((1, 1)) == [(1, 2)]
    assert len(W.ordered_shuffles((2, 2))) == 3
    sigma = (4, 6, 3, 5, 8, 7, 9, 11, 12, 1, 2, 10, 13)
    assert W.is_ordered_shuffle(sigma, (2, 3, 4, 4))


def test_enumeration_cap():
    with pytest.raises(W.EnumerationCapError):
        W.shuffles((5, 5))
    previous = W.set_enumeration_cap(10)
    try:
        assert len(W.shuffles((5, 5))) == comb(10, 5)
    finally:
        W.set_enumeration_cap(previous)


def test_shuffle_multisets():
    assert W.shuffle_multiset((1,), (2,)) == Counter({(1, 2): 1, (2, 1): 1})
    assert W.shuffle_multiset((1, 1), (1,)) == Counter({(1, 1, 1): 3})
    assert W.ordered_shuffle_multiset((3,), (1,), (2,)) == Counter({(3, 1, 2): 1})


def test_unshuffles():
    assert W.unshuffle_pairs((1,)) == Counter({((), (1,)): 1, ((1,), ()): 1})
    assert W.ordered_unshuffle((1, 2), 2) == Counter({((1,), (2,)): 1})


def test_unshuffle_multiplicity_duality():
    for n in range(6):
        for k in W.all_words(2, n):
            pairs = W.unshuffle_pairs(k)
            for (i, j), mult in pairs.items():
                assert W.shuffle_multiset(i, j)[k] == mult
            for a in range(n + 1):
                for i in W.all_words(2, a):
                    for j in W.all_words(2, n - a):
                        assert pairs[(i, j)] == W.shuffle_multiset(i, j)[k]


def test_ordered_compat_single_word():
    k = (1, 2, 1)
    rhs = W.ordered_compat_rhs(k)
    assert rhs == Counter({(k[:c], k[c:]): 1 for c in range(len(k) + 1)})


def test_ordered_compat_worked_pair_present():
    words = [(1, 2), (2,), (3, 1), (2, 3)]
    rhs = W.ordered_compat_rhs(*words, cap=8)
    lhs = W.ordered_compat_lhs(*words, cap=8)
    assert rhs == lhs
    assert any(len(i) > 0 and len(j) > 0 for i, j in rhs)


def test_graded_union_worked_case():
    k1, k2, k3 = ("a1", "a2", "a3"), ("b1", "b2"), ("c1", "c2", "c3")
    lhs, rhs = W.graded_ordered_union((2, 1), [k1, k2, k3])
    target = ("c1", "a1", "b1", "c2", "c3", "a2", "a3", "b2")
    assert lhs[target] > 0 and rhs[target] > 0
    assert lhs == rhs


def test_graded_union_singletons_is_plain_shuffle():
    ks = [(1,), (2, 1), (3,)]
    lhs, rhs = W.graded_ordered_union((1, 1, 1), ks)
    assert lhs == W.shuffle_multiset(*ks)
    assert rhs == lhs


def test_dual_reduced_small():
    assert W.dual_reduced_lhs((1,), (2,), 2) == W.dual_reduced_rhs((1,), (2,), 2)


def test_word_json_roundtrip():
    assert W.word_from_json(W.word_to_json((1, 2, 3))) == (1, 2, 3)
    assert W.word_from_json(W.word_to_json(())) == ()
    ms = W.shuffle_multiset((1,), (2,))
    assert json.loads(json.dumps(W.multiset_to_json(ms))) == [[[1, 2], 1], [[2, 1], 1]]


def test_letters_are_checked():
    with pytest.raises(ValueError):
        W.check_alphabet((0, 1), 2)
    with pytest.raises(ValueError):
        W.check_alphabet((3,), 2)
