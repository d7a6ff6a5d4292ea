"""Signature features for batches of sampled paths.

Works with scikit-learn pipelines when the ``features`` extra is installed,
and as a plain fit/transform object otherwise.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .roughpath import pwl_signature
from .tensor import layout

try:
    from sklearn.base import BaseEstimator, TransformerMixin
except ImportError:  # optional dependency
    class BaseEstimator:  # type: ignore[no-redef]
        def get_params(self, deep: bool = True) -> dict:
            return {"level": self.level, "log": self.log}

        def set_params(self, **params):
            for key, value in params.items():
                setattr(self, key, value)
            return self

    class TransformerMixin:  # type: ignore[no-redef]
        def fit_transform(self, X, y=None):
            return self.fit(X, y).transform(X)


class SignatureTransformer(TransformerMixin, BaseEstimator):
    """Map each path (array of rows ``t, x1, ..., xd``) to its truncated signature.

    Level 0 is dropped, so the output has ``d + d^2 + ... + d^level`` columns.
    With ``log=True`` the truncated log signature is returned instead.
    """

    def __init__(self, level: int = 2, log: bool = False):
        self.level = level
        self.log = log

    def _check(self, X: Sequence) -> list[np.ndarray]:
        paths = [np.asarray(x, dtype=float) for x in X]
        if not paths:
            raise ValueError("need at least one path")
        for x in paths:
            if x.ndim != 2 or x.shape[1] < 2 or x.shape[0] < 2:
                raise ValueError("each path must be an array of rows t, x1, ..., xd with at least two rows")
        return paths

    def fit(self, X, y=None):
        paths = self._check(X)
        dims = {x.shape[1] - 1 for x in paths}
        if len(dims) != 1:
            raise ValueError("paths must share their dimension")
        if self.level < 1:
            raise ValueError("level must be at least 1")
        self.dim_ = dims.pop()
        self.n_features_out_ = layout(self.dim_, self.level).D - 1
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "dim_"):
            raise ValueError("call fit before transform")
        paths = self._check(X)
        lay = layout(self.dim_, self.level)
        out = np.empty((len(paths), lay.D - 1))
        for i, x in enumerate(paths):
            if x.shape[1] - 1 != self.dim_:
                raise ValueError(f"path {i} has dimension {x.shape[1] - 1}, fitted on {self.dim_}")
            path = pwl_signature(x, self.level)
            value = path.increments([path.t0, path.t1])
            if self.log:
                value = T.flat_log(value, lay)
            out[i] = value[0, 1:]
        return out
