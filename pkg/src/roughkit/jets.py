"""Smooth maps with all partial derivatives up to a requested order.

A jet of ``F: R^n -> R^m`` at a batch of points is an array of shape
``(B, m, D)`` where ``D`` indexes words over ``1..n`` of length ``0..order``
(graded, lexicographic), the entry for word ``(i1, ..., ik)`` being
``d_{i1} ... d_{ik} F``. Matrix-valued maps use a row-major ``out_shape``.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from . import words as W
from .tensor import Layout, layout


@lru_cache(maxsize=None)
def composition_plan(n_letters: int, order: int, ordered: bool):
    """Terms ``(word index, [(m, part indices, coefficient)])`` for chain-rule style sums.

    With ``ordered`` the parts run over ordered unshuffles into nonempty
    words with unit weight; otherwise over all unshuffles into nonempty
    words weighted by ``1/m!``.
    """
    lay = layout(n_letters, order)
    plan = []
    for word in lay.words()[1:]:
        terms = []
        for m in range(1, len(word) + 1):
            if ordered:
                parts = W.ordered_unshuffle(word, m)
                weight = 1.0
            else:
                parts = W.unshuffle(word, m)
                weight = 1.0 / math.factorial(m)
            for split, mult in sorted(parts.items()):
                if any(len(x) == 0 for x in split):
                    continue
                terms.append((m, tuple(lay.index(x) for x in split), mult * weight))
        plan.append((lay.index(word), terms))
    return plan


@lru_cache(maxsize=None)
def leibniz_plan(n_letters: int, order: int):
    """Terms ``(word index, [(left index, right index, multiplicity)])`` over all unshuffles in two."""
    lay = layout(n_letters, order)
    plan = []
    for word in lay.words():
        terms = [(lay.index(a), lay.index(b), mult) for (a, b), mult in sorted(W.unshuffle(word, 2).items())]
        plan.append((lay.index(word), terms))
    return plan


def contract(outer: np.ndarray, inner: np.ndarray, plan, outer_lay: Layout, out: np.ndarray) -> np.ndarray:
    """Fill ``out[..., idx]`` with ``sum coef * <outer level m, tensor product of inner parts>``."""
    batch = inner.shape[0]
    for idx, terms in plan:
        acc = 0.0
        for m, parts, coef in terms:
            prod = inner[:, :, parts[0]]
            for part in parts[1:]:
                prod = (prod[:, :, None] * inner[:, :, part][:, None, :]).reshape(batch, -1)
            acc = acc + coef * np.einsum("bck,bk->bc", outer[:, :, outer_lay.sl(m)], prod)
        out[:, :, idx] = acc
    return out


class JetFunction:
    """Base class. Subclasses implement ``_jet(x, order)`` for a batch ``x`` of shape (B, n)."""

    def __init__(self, in_dim: int, out_shape: int | Sequence[int], max_order: int | None = None):
        self.in_dim = int(in_dim)
        self.out_shape = (int(out_shape),) if np.isscalar(out_shape) else tuple(int(s) for s in out_shape)
        self.out_size = int(np.prod(self.out_shape))
        self.max_order = max_order

    def _jet(self, x: np.ndarray, order: int) -> np.ndarray:
        raise NotImplementedError

    def jet(self, x, order: int) -> np.ndarray:
        if self.max_order is not None and order > self.max_order:
            raise ValueError(f"jet order {order} exceeds the available order {self.max_order}")
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = x.reshape(-1, self.in_dim)
        out = self._jet(xb, order)
        return out[0] if single else out

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        val = self.jet(x.reshape(-1, self.in_dim), 0)[:, :, 0]
        return val[0].reshape(self.out_shape) if x.ndim == 1 else val

    def symbolic(self, symbols) -> list:
        """Flattened symbolic outputs in terms of ``symbols``, when the map has a closed form."""
        raise NotImplementedError(f"{type(self).__name__} has no symbolic form")

    def derivative(self, x, word: Sequence[int]) -> np.ndarray:
        word = tuple(word)
        jet = self.jet(np.asarray(x, dtype=float).reshape(1, self.in_dim), len(word))[0]
        return jet[:, layout(self.in_dim, len(word)).index(word)].reshape(self.out_shape)


def _multi_index(word: Sequence[int], n: int) -> tuple[int, ...]:
    counts = [0] * n
    for letter in word:
        counts[letter - 1] += 1
    return tuple(counts)


def _fill_symmetric(batch: int, out_size: int, n: int, order: int,
                    evaluate: Callable[[tuple[int, ...]], np.ndarray]) -> np.ndarray:
    """Assemble a jet from a function of multi-indices (partials commute)."""
    lay = layout(n, order)
    out = np.zeros((batch, out_size, lay.D))
    cache: dict[tuple[int, ...], np.ndarray] = {}
    for k, word in enumerate(lay.words()):
        key = _multi_index(word, n)
        if key not in cache:
            cache[key] = evaluate(key)
        out[:, :, k] = cache[key]
    return out


class PolynomialJet(JetFunction):
    """Polynomial map given per output component as ``{exponent tuple: coefficient}``."""

    def __init__(self, in_dim: int, components: Sequence[dict], out_shape=None):
        out_shape = len(components) if out_shape is None else out_shape
        super().__init__(in_dim, out_shape)
        if len(components) != self.out_size:
            raise ValueError("one polynomial per output component is required")
        self.components = [{tuple(int(e) for e in exps): float(c) for exps, c in comp.items()} for comp in components]
        for comp in self.components:
            if any(len(exps) != in_dim for exps in comp):
                raise ValueError("exponent tuples must have length in_dim")

    @classmethod
    def from_sympy(cls, exprs, symbols, out_shape=None) -> "PolynomialJet":
        comps = []
        for expr in exprs:
            poly = sp.Poly(sp.sympify(expr), *symbols)
            comps.append({exps: float(c) for exps, c in poly.terms()})
        return cls(len(symbols), comps, out_shape)

    def symbolic(self, symbols):
        return [sum((sp.Float(c) * sp.Mul(*[v**e for v, e in zip(symbols, exps)]) for exps, c in comp.items()),
                    sp.Integer(0)) for comp in self.components]

    def _jet(self, x, order):
        def evaluate(alpha):
            cols = np.zeros((x.shape[0], self.out_size))
            for k, comp in enumerate(self.components):
                for exps, c in comp.items():
                    if any(e < a for e, a in zip(exps, alpha)):
                        continue
                    coef = c
                    term = np.ones(x.shape[0])
                    for i, (e, a) in enumerate(zip(exps, alpha)):
                        coef *= math.perm(e, a)
                        if e - a:
                            term = term * x[:, i] ** (e - a)
                    cols[:, k] += coef * term
            return cols

        return _fill_symmetric(x.shape[0], self.out_size, self.in_dim, order, evaluate)


class LinearJet(JetFunction):
    """Affine map ``x -> A x + b``; ``out_shape`` may reshape the output."""

    def __init__(self, A, b=None, out_shape=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        super().__init__(A.shape[1], A.shape[0] if out_shape is None else out_shape)
        self.A = A
        self.b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float).reshape(A.shape[0])

    def symbolic(self, symbols):
        return [sum((sp.Float(a) * v for a, v in zip(row, symbols) if a != 0), sp.Float(b))
                for row, b in zip(self.A, self.b)]

    def _jet(self, x, order):
        lay = layout(self.in_dim, order)
        out = np.zeros((x.shape[0], self.out_size, lay.D))
        out[:, :, 0] = x @ self.A.T + self.b
        if order >= 1:
            out[:, :, lay.sl(1)] = self.A[None, :, :]
        return out


class ConstantJet(JetFunction):
    def __init__(self, value, in_dim: int):
        value = np.asarray(value, dtype=float)
        super().__init__(in_dim, value.shape if value.ndim else (1,))
        self.value = value.reshape(-1)

    def symbolic(self, symbols):
        return [sp.Float(v) for v in self.value]

    def _jet(self, x, order):
        out = np.zeros((x.shape[0], self.out_size, layout(self.in_dim, order).D))
        out[:, :, 0] = self.value
        return out


class SympyJet(JetFunction):
    """Jets from symbolic expressions, differentiated exactly and lambdified."""

    def __init__(self, exprs, symbols, out_shape=None):
        exprs = [sp.sympify(e) for e in np.asarray(exprs, dtype=object).reshape(-1)]
        symbols = [sp.Symbol(s) if isinstance(s, str) else s for s in symbols]
        super().__init__(len(symbols), len(exprs) if out_shape is None else out_shape)
        self.exprs = exprs
        self.symbols = symbols
        self._compiled: dict[tuple[int, ...], Callable] = {}

    @classmethod
    def from_strings(cls, exprs: Sequence[str], variables: Sequence[str], out_shape=None) -> "SympyJet":
        symbols = sp.symbols(list(variables))
        local = {str(s): s for s in symbols}
        return cls([sp.sympify(e, locals=local) for e in exprs], symbols, out_shape)

    def symbolic(self, symbols):
        return [e.subs(dict(zip(self.symbols, symbols)), simultaneous=True) for e in self.exprs]

    def _compiled_for(self, alpha):
        fn = self._compiled.get(alpha)
        if fn is None:
            derivs = []
            for expr in self.exprs:
                for sym, count in zip(self.symbols, alpha):
                    if count:
                        expr = sp.diff(expr, sym, count)
                derivs.append(expr)
            fn = sp.lambdify(self.symbols, derivs, modules="numpy")
            self._compiled[alpha] = fn
        return fn

    def _jet(self, x, order):
        def evaluate(alpha):
            vals = self._compiled_for(alpha)(*x.T)
            return np.stack([np.broadcast_to(np.asarray(v, dtype=float), (x.shape[0],)) for v in vals], axis=1)

        return _fill_symmetric(x.shape[0], self.out_size, self.in_dim, order, evaluate)


class ComposedJet(JetFunction):
    """``outer o inner`` via the multivariate chain rule (Faa di Bruno)."""

    def __init__(self, outer: JetFunction, inner: JetFunction, out_shape=None):
        if outer.in_dim != inner.out_size:
            raise ValueError("dimension mismatch in composition")
        super().__init__(inner.in_dim, outer.out_shape if out_shape is None else out_shape)
        self.outer, self.inner = outer, inner

    def symbolic(self, symbols):
        inner = self.inner.symbolic(symbols)
        dummies = sp.symbols(f"_c0:{self.outer.in_dim}")
        return [e.subs(dict(zip(dummies, inner)), simultaneous=True) for e in self.outer.symbolic(dummies)]

    def _jet(self, x, order):
        inner = self.inner.jet(x, order)
        outer = self.outer.jet(inner[:, :, 0], order)
        out = np.zeros((x.shape[0], self.out_size, layout(self.in_dim, order).D))
        out[:, :, 0] = outer[:, :, 0]
        plan = composition_plan(self.in_dim, order, False)
        return contract(outer, inner, plan, layout(self.outer.in_dim, order), out)


class ProductJet(JetFunction):
    """Pointwise matrix product ``left(x) @ right(x)`` (Leibniz rule)."""

    def __init__(self, left: JetFunction, right: JetFunction):
        if left.in_dim != right.in_dim:
            raise ValueError("factors must share their domain")
        lrows, lcols = _as_matrix_shape(left.out_shape)
        rrows, rcols = _as_matrix_shape(right.out_shape)
        if lcols != rrows:
            raise ValueError("inner matrix dimensions differ")
        super().__init__(left.in_dim, (lrows, rcols))
        self.left, self.right = left, right
        self._shapes = (lrows, lcols, rcols)

    def symbolic(self, symbols):
        p, q, r = self._shapes
        a = sp.Matrix(p, q, self.left.symbolic(symbols))
        b = sp.Matrix(q, r, self.right.symbolic(symbols))
        return list(a * b)

    def _jet(self, x, order):
        p, q, r = self._shapes
        a = self.left.jet(x, order).reshape(x.shape[0], p, q, -1)
        b = self.right.jet(x, order).reshape(x.shape[0], q, r, -1)
        out = np.zeros((x.shape[0], p, r, a.shape[-1]))
        for idx, terms in leibniz_plan(self.in_dim, order):
            for i, j, mult in terms:
                out[..., idx] += mult * np.einsum("bpq,bqr->bpr", a[..., i], b[..., j])
        return out.reshape(x.shape[0], p * r, -1)


def _as_matrix_shape(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 1:
        return shape[0], 1
    if len(shape) == 2:
        return shape
    raise ValueError("only vectors and matrices are supported")


class DerivativeJet(JetFunction):
    """``DF`` as a map into ``L(R^n, R^m)``, shape (m, n)."""

    def __init__(self, base: JetFunction):
        super().__init__(base.in_dim, (base.out_size, base.in_dim),
                         None if base.max_order is None else base.max_order - 1)
        self.base = base

    def symbolic(self, symbols):
        return [sp.diff(f, v) for f in self.base.symbolic(symbols) for v in symbols]

    def _jet(self, x, order):
        n = self.in_dim
        src = layout(n, order + 1)
        dst = layout(n, order)
        full = self.base.jet(x, order + 1)
        out = np.zeros((x.shape[0], self.base.out_size, n, dst.D))
        for k, word in enumerate(dst.words()):
            for delta in range(1, n + 1):
                out[:, :, delta - 1, k] = full[:, :, src.index(word + (delta,))]
        return out.reshape(x.shape[0], self.out_size, dst.D)


class StackedJet(JetFunction):
    """Concatenate the outputs of several maps sharing a domain."""

    def __init__(self, parts: Sequence[JetFunction], out_shape=None):
        if len({p.in_dim for p in parts}) != 1:
            raise ValueError("stacked maps must share their domain")
        total = sum(p.out_size for p in parts)
        super().__init__(parts[0].in_dim, total if out_shape is None else out_shape)
        self.parts = list(parts)

    def symbolic(self, symbols):
        return [e for part in self.parts for e in part.symbolic(symbols)]

    def _jet(self, x, order):
        return np.concatenate([p.jet(x, order) for p in self.parts], axis=1)


class PrecomposedLinear(JetFunction):
    """``x -> F(A x + b)``."""

    def __init__(self, base: JetFunction, A, b=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != base.in_dim:
            raise ValueError("linear map does not land in the domain")
        super().__init__(A.shape[1], base.out_shape, base.max_order)
        self.base, self.A = base, A
        self.b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)

    def symbolic(self, symbols):
        moved = [sum((sp.Float(a) * v for a, v in zip(row, symbols) if a != 0), sp.Float(b))
                 for row, b in zip(self.A, self.b)]
        dummies = sp.symbols(f"_p0:{self.base.in_dim}")
        return [e.subs(dict(zip(dummies, moved)), simultaneous=True) for e in self.base.symbolic(dummies)]

    def _jet(self, x, order):
        y = x @ self.A.T + self.b
        src_lay = layout(self.base.in_dim, order)
        dst_lay = layout(self.in_dim, order)
        src = self.base.jet(y, order)
        out = np.zeros((x.shape[0], self.out_size, dst_lay.D))
        m, n = self.A.shape
        for level in range(order + 1):
            block = src[:, :, src_lay.sl(level)].reshape((x.shape[0], self.out_size) + (m,) * level)
            for axis in range(level):
                block = np.moveaxis(np.tensordot(block, self.A, axes=([2 + axis], [0])), -1, 2 + axis)
            out[:, :, dst_lay.sl(level)] = block.reshape(x.shape[0], self.out_size, -1)
        return out


class FiniteDifferenceJet(JetFunction):
    """Central finite differences of a black-box vectorized map, orders up to 3."""

    _STENCILS = {
        0: ([0], [1.0]),
        1: ([-1, 1], [-0.5, 0.5]),
        2: ([-1, 0, 1], [1.0, -2.0, 1.0]),
        3: ([-2, -1, 1, 2], [-0.5, 1.0, -1.0, 0.5]),
    }

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], in_dim: int, out_shape, step: float = 1e-3):
        super().__init__(in_dim, out_shape, max_order=3)
        self.fn, self.step = fn, float(step)

    def _eval(self, x):
        return np.asarray(self.fn(x), dtype=float).reshape(x.shape[0], self.out_size)

    def _jet(self, x, order):
        h = self.step

        def evaluate(alpha):
            acc = np.zeros((x.shape[0], self.out_size))
            axes = [self._STENCILS[a] for a in alpha]
            for combo in np.ndindex(*[len(s[0]) for s in axes]):
                shift = np.array([axes[i][0][c] for i, c in enumerate(combo)], dtype=float) * h
                weight = np.prod([axes[i][1][c] for i, c in enumerate(combo)])
                acc += weight * self._eval(x + shift)
            return acc / h ** sum(alpha)

        return _fill_symmetric(x.shape[0], self.out_size, self.in_dim, order, evaluate)


def identity_jet(n: int) -> LinearJet:
    return LinearJet(np.eye(n))


def jet_from_descriptor(desc: dict) -> JetFunction:
    """Build a map from a JSON-style descriptor.

    ``{"variables": ["x1", "x2"], "expressions": ["x1*x2", "sin(x1)"], "shape": [2]}``
    Polynomial expressions get an exact polynomial evaluator, others go
    through symbolic differentiation.
    """
    try:
        variables = list(desc["variables"])
        exprs = list(desc["expressions"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"jet descriptor needs 'variables' and 'expressions': {exc}") from None
    shape = desc.get("shape")
    symbols = sp.symbols(variables)
    local = {str(s): s for s in symbols}
    try:
        parsed = [sp.sympify(e, locals=local) for e in exprs]
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ValueError(f"cannot parse expression: {exc}") from None
    if all(e.is_polynomial(*symbols) for e in parsed):
        return PolynomialJet.from_sympy(parsed, symbols, shape)
    return SympyJet(parsed, symbols, shape)
