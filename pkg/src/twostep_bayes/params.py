"""Structured within-model parameters and their fitted values.

Four families, one per application:

  StepFunction    nondecreasing piecewise-constant signal on design indices
  MaxAffine       max of affine pieces on a vector design
  FactorMatrix    sum of rank-one factor pairs, evaluated through matrix designs
  SparsePlusStep  sparse linear part plus a StepFunction nuisance

Regression experiments consume these through ``fitted_values``, which also
accepts raw signal vectors (and scalars, broadcast to length n) so the
experiment layer works on plain arrays when no structure is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import KindMismatch

__all__ = [
    "StepFunction",
    "MaxAffine",
    "FactorMatrix",
    "SparsePlusStep",
    "fitted_values",
]


def _frozen_array(x, dtype=float, ndim=None):
    a = np.asarray(x, dtype=dtype)
    if ndim is not None and a.ndim != ndim:
        raise KindMismatch(f"expected {ndim}-d array, got shape {a.shape}")
    a = a.copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class StepFunction:
    """Nondecreasing step function on design indices 0..n-1.

    change_indices[k] marks where level k starts; the first level extends
    left of change_indices[0], so indices before it also take levels[0].
    Both tuples have length m (the number of pieces).
    """

    change_indices: tuple[int, ...]
    levels: tuple[float, ...]

    def __post_init__(self):
        ci = tuple(int(i) for i in self.change_indices)
        lv = tuple(float(v) for v in self.levels)
        if len(ci) != len(lv) or not ci:
            raise KindMismatch("change_indices and levels must be equal nonzero length")
        if any(b <= a for a, b in zip(ci, ci[1:])):
            raise KindMismatch("change_indices must be strictly increasing")
        if ci[0] < 0:
            raise KindMismatch("change_indices must be nonnegative")
        if any(b < a for a, b in zip(lv, lv[1:])):
            raise KindMismatch("levels must be nondecreasing")
        object.__setattr__(self, "change_indices", ci)
        object.__setattr__(self, "levels", lv)

    @property
    def m(self) -> int:
        return len(self.levels)

    def values(self, n: int) -> np.ndarray:
        ci = self.change_indices
        if ci[-1] >= n:
            raise KindMismatch(f"change index {ci[-1]} outside design of length {n}")
        out = np.empty(n)
        starts = (0,) + ci[1:]
        stops = ci[1:] + (n,)
        for s, t, lv in zip(starts, stops, self.levels):
            out[s:t] = lv
        return out


@dataclass(frozen=True)
class MaxAffine:
    """max_i (a_i . x + b_i) over a list of planes (a_i, b_i)."""

    planes: tuple[tuple[tuple[float, ...], float], ...]

    def __post_init__(self):
        norm = []
        d = None
        for a, b in self.planes:
            a = tuple(float(v) for v in a)
            if d is None:
                d = len(a)
            elif len(a) != d:
                raise KindMismatch("all planes must share the input dimension")
            norm.append((a, float(b)))
        if not norm:
            raise KindMismatch("need at least one plane")
        object.__setattr__(self, "planes", tuple(norm))

    @property
    def m(self) -> int:
        return len(self.planes)

    @property
    def d(self) -> int:
        return len(self.planes[0][0])

    def values(self, design: np.ndarray) -> np.ndarray:
        X = np.asarray(design, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != self.d:
            raise KindMismatch(f"design dimension {X.shape[1]} != plane dimension {self.d}")
        A = np.array([a for a, _ in self.planes])          # (m, d)
        b = np.array([b for _, b in self.planes])          # (m,)
        return (X @ A.T + b).max(axis=1)


@dataclass(frozen=True)
class FactorMatrix:
    """A = sum_i u_i v_i^T; us has shape (r, m1), vs has shape (r, m2)."""

    us: np.ndarray = field(repr=False)
    vs: np.ndarray = field(repr=False)

    def __post_init__(self):
        us = _frozen_array(self.us, ndim=2)
        vs = _frozen_array(self.vs, ndim=2)
        if us.shape[0] != vs.shape[0]:
            raise KindMismatch("us and vs must hold the same number of factor pairs")
        object.__setattr__(self, "us", us)
        object.__setattr__(self, "vs", vs)

    @property
    def rank(self) -> int:
        return self.us.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.us.shape[1], self.vs.shape[1])

    def matrix(self) -> np.ndarray:
        return self.us.T @ self.vs

    def values(self, design: np.ndarray) -> np.ndarray:
        X = np.asarray(design, dtype=float)
        if X.ndim != 3 or X.shape[1:] != self.shape:
            raise KindMismatch(
                f"trace design must have shape (n, {self.shape[0]}, {self.shape[1]})"
            )
        return np.einsum("nij,ij->n", X, self.matrix())


@dataclass(frozen=True)
class SparsePlusStep:
    """X[:, support] @ beta + step on the (z-sorted) design index order."""

    support: tuple[int, ...]
    beta: tuple[float, ...]
    step: StepFunction

    def __post_init__(self):
        sup = tuple(int(i) for i in self.support)
        b = tuple(float(v) for v in self.beta)
        if len(sup) != len(b):
            raise KindMismatch("support and beta must have equal length")
        if any(j <= i for i, j in zip(sup, sup[1:])):
            raise KindMismatch("support must be strictly increasing")
        if sup and sup[0] < 0:
            raise KindMismatch("support indices must be nonnegative")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "beta", b)

    @property
    def s(self) -> int:
        return len(self.support)

    def values(self, design: np.ndarray) -> np.ndarray:
        X = np.asarray(design, dtype=float)
        if X.ndim != 2:
            raise KindMismatch("partially linear design must be a (n, p) matrix")
        n, p = X.shape
        if self.support and self.support[-1] >= p:
            raise KindMismatch(f"support index {self.support[-1]} outside p={p}")
        lin = X[:, list(self.support)] @ np.asarray(self.beta) if self.support else 0.0
        return lin + self.step.values(n)


def fitted_values(f, n: int, design=None) -> np.ndarray:
    """Signal vector of length n for any accepted parameter representation."""
    if isinstance(f, StepFunction):
        return f.values(n)
    if isinstance(f, MaxAffine):
        if design is None:
            raise KindMismatch("max-affine parameters need a vector design")
        return f.values(design)
    if isinstance(f, FactorMatrix):
        if design is None:
            raise KindMismatch("factor-matrix parameters need a matrix design")
        return f.values(design)
    if isinstance(f, SparsePlusStep):
        if design is None:
            raise KindMismatch("sparse-plus-step parameters need a design matrix")
        return f.values(design)
    if np.isscalar(f):
        return np.full(n, float(f))
    arr = np.asarray(f, dtype=float)
    if arr.ndim != 1:
        raise KindMismatch(f"raw signal must be 1-d, got shape {arr.shape}")
    if arr.shape[0] != n:
        raise KindMismatch(f"signal length {arr.shape[0]} != n={n}")
    return arr
