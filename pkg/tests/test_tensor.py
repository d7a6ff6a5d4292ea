from fractions import Fraction

import numpy as np
import pytest

from roughkit import tensor as T
from roughkit.oracle import brute_shuffle


def _rng():
    return np.random.default_rng(7)


def test_unit_and_letters():
    one = T.TensorSeries.unit(2, 3, T.RATIONAL)
    assert one[()] == 1 and one.max_abs() == 1
    e1 = T.TensorSeries.letter(2, 3, 1, T.RATIONAL)
    assert T.concat_mul(e1, e1)[(1, 1)] == 1
    assert T.shuffle_mul(e1, e1)[(1, 1)] == 2


def test_shuffle_of_letters():
    e1 = T.TensorSeries.letter(2, 2, 1, T.RATIONAL)
    e2 = T.TensorSeries.letter(2, 2, 2, T.RATIONAL)
    out = T.shuffle_mul(e1, e2)
    assert out.to_dict() == {(1, 2): 1, (2, 1): 1}


def test_shuffle_matches_brute_force_oracle():
    rng = _rng()
    for _ in range(50):
        d, N = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        a, b = T.random_series(d, N, rng), T.random_series(d, N, rng)
        expected = {w: c for w, c in brute_shuffle(a.to_dict(), b.to_dict()).items() if len(w) <= N}
        assert T.shuffle_mul(a, b).to_dict() == expected


def test_shuffle_is_commutative_and_associative():
    rng = _rng()
    a, b, c = (T.random_series(2, 4, rng) for _ in range(3))
    assert T.shuffle_mul(a, b) == T.shuffle_mul(b, a)
    assert T.shuffle_mul(T.shuffle_mul(a, b), c) == T.shuffle_mul(a, T.shuffle_mul(b, c))


def test_concat_is_associative_not_commutative():
    rng = _rng()
    a, b, c = (T.random_series(2, 3, rng) for _ in range(3))
    assert T.concat_mul(T.concat_mul(a, b), c) == T.concat_mul(a, T.concat_mul(b, c))
    assert T.concat_mul(a, b) != T.concat_mul(b, a)


def test_ordered_shuffle_last_letter_from_right_factor():
    e1 = T.TensorSeries.letter(3, 3, 1, T.RATIONAL)
    w23 = T.TensorSeries.from_words(3, 3, {(2, 3): 1}, T.RATIONAL)
    assert T.ordered_shuffle_mul(e1, w23).to_dict() == {(1, 2, 3): 1, (2, 1, 3): 1}
    assert T.ordered_shuffle_mul(w23, e1).to_dict() == {(2, 3, 1): 1}
    assert T.ordered_shuffle_chain(e1, w23, e1) == T.ordered_shuffle_mul(T.ordered_shuffle_mul(e1, w23), e1)


def test_kinds_do_not_mix():
    a = T.TensorSeries.unit(2, 2, T.RATIONAL)
    b = T.TensorSeries.unit(2, 2, T.FLOAT)
    with pytest.raises(T.ScalarKindError):
        T.concat_mul(a, b)
    assert T.concat_mul(a.to_kind(T.FLOAT), b) == b


def test_exp_log_inverse_roundtrip():
    rng = _rng()
    a = T.random_series(2, 4, rng, unit=False)
    g = T.tensor_exp(a)
    assert T.tensor_log(g) == a
    assert T.concat_mul(g, T.tensor_inverse(g)) == T.TensorSeries.unit(2, 4, T.RATIONAL)


def test_exp_of_lie_element_is_grouplike():
    e1 = T.TensorSeries.letter(2, 4, 1, T.RATIONAL)
    e2 = T.TensorSeries.letter(2, 4, 2, T.RATIONAL)
    bracket = T.concat_mul(e1, e2) - T.concat_mul(e2, e1)
    lie = e1.scale(Fraction(1, 2)) + bracket.scale(Fraction(1, 3))
    report = T.is_grouplike(T.tensor_exp(lie))
    assert report["defect"] == 0 and report["passed"]
    bad = T.random_series(2, 3, _rng(), unit=True)
    assert not T.is_grouplike(bad)["passed"]


def test_lyndon_words_counts():
    # necklace polynomial: number of Lyndon words of length n over 2 letters
    assert [len([w for w in T.lyndon_words(2, 5) if len(w) == n]) for n in range(1, 6)] == [2, 1, 2, 3, 6]
    assert T.lyndon_words(2, 3) == sorted(T.lyndon_words(2, 3), key=lambda w: (len(w), w))
    assert T.is_lyndon((1, 1, 2)) and not T.is_lyndon((1, 2, 1))
    assert T.lyndon_factorization((2, 1, 1, 2, 1)) == [(2,), (1, 1, 2), (1,)]


def test_lyndon_decomposition_expands_back():
    for word in [(2, 1), (1, 2, 1), (2, 2, 1, 1), (1, 3, 2)]:
        poly = T.lyndon_decompose(word)
        assert T.expand_shuffle_polynomial(poly) == {word: 1}


def test_geometrize_fixes_grouplike_and_lyndon_values():
    rng = _rng()
    a = T.random_series(2, 4, rng, unit=True)
    g = T.geometrize(a)
    assert T.is_grouplike(g)["defect"] == 0
    assert T.geometrize(g) == g
    for w in T.lyndon_words(2, 4):
        assert g[w] == a[w]
    override = T.geometrize(a, {(1, 2): Fraction(5, 3)})
    assert override[(1, 2)] == Fraction(5, 3)


def test_symmetrize_series_on_tensor_power():
    x = T.TensorSeries.from_words(2, 2, {(1,): 2, (2,): 3}, T.RATIONAL)
    g = T.tensor_exp(x)
    assert T.symmetrize_series(g) == g


def test_coproduct_pairings():
    rng = _rng()
    a, b, c = (T.random_series(2, 3, rng) for _ in range(3))
    assert T.deconcat(c).pair(a, b) == T.pair(T.concat_mul(a, b), c)
    assert T.shuffle_coproduct(c).pair(a, b) == T.pair(T.shuffle_mul(a, b), c)


def test_permute_slots_and_symmetrize():
    M = T.MultiTensor(2, 3, {((1,), (2, 2)): 3})
    swapped = T.permute_slots(M, (2, 1))
    assert swapped[((2, 2), (1,))] == 3
    sym = T.symmetrize_slots(M)
    assert sym[((1,), (2, 2))] == Fraction(3, 2) == sym[((2, 2), (1,))]


def test_json_roundtrip():
    a = T.random_series(2, 3, _rng())
    assert T.TensorSeries.from_json(a.to_json()) == a
    f = a.to_kind(T.FLOAT)
    assert T.TensorSeries.from_json(f.to_json()) == f


def test_flat_operations_match_series():
    rng = _rng()
    lay = T.layout(2, 3)
    a = T.random_series(2, 3, rng, kind=T.FLOAT, unit=True)
    b = T.random_series(2, 3, rng, kind=T.FLOAT, unit=True)
    fa, fb = T.to_flat(a), T.to_flat(b)
    assert np.allclose(T.flat_mul(fa, fb, lay), T.to_flat(T.concat_mul(a, b)))
    assert np.allclose(T.flat_log(fa, lay), T.to_flat(T.tensor_log(a)))
    assert np.allclose(T.flat_exp(T.flat_log(fa, lay), lay), fa)
    assert np.allclose(T.flat_mul(fa, T.flat_inverse(fa, lay), lay), lay.unit())
    assert T.from_flat(fa, 2, 3) == a


def test_flat_exp_linear_is_segment_signature():
    lay = T.layout(2, 3)
    v = np.array([[0.3, -0.7]])
    sig = T.flat_exp_linear(v, lay)[0]
    assert np.isclose(sig[lay.index((1, 2))], 0.3 * -0.7 / 2)
    assert np.isclose(sig[lay.index((2, 2, 2))], (-0.7) ** 3 / 6)


def test_flat_geometrize_matches_rational():
    rng = _rng()
    a = T.random_series(2, 3, rng, kind=T.RATIONAL, unit=True)
    lay = T.layout(2, 3)
    flat = T.flat_geometrize(T.to_flat(a.to_kind(T.FLOAT))[None, :], lay)[0]
    assert np.allclose(flat, T.to_flat(T.geometrize(a).to_kind(T.FLOAT)))


def test_layout_indexing():
    lay = T.layout(3, 2)
    assert lay.D == 1 + 3 + 9
    assert lay.index(()) == 0 and lay.index((3,)) == 3 and lay.index((1, 1)) == 4
    assert lay.words()[lay.index((2, 3))] == (2, 3)
