"""Compositions, closure, divergence and pivot log-ratio coordinates.

Compositions are plain 1-D ``numpy`` arrays; collections of them are 2-D
arrays with one composition per row.  Part indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BoundaryPoint,
    DegenerateInput,
    DimMismatch,
    EmptyData,
    NegativeInput,
    NotComposition,
)

SUM_TOL = 1e-9
ROUNDING_SLACK = 4 * np.finfo(float).eps


def closure(v) -> np.ndarray:
    """Scale non-negative vector(s) to unit sum along the last axis.

    >>> closure([2, 2, 4])
    array([0.25, 0.25, 0.5 ])
    """
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise NegativeInput("closure of a vector with negative entries")
    s = v.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise DegenerateInput("closure of an all-zero vector is undefined")
    return v / s


def as_composition(v, tol: float = SUM_TOL) -> np.ndarray:
    """Validate compositions, silently re-closing rows within ``tol`` of unit sum.

    Works on a single vector or on a 2-D array of row compositions.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[-1] == 0:
        raise DimMismatch("a composition needs at least one part")
    if not np.all(np.isfinite(v)):
        raise NotComposition("composition contains non-finite values")
    if np.any(v < 0):
        raise NegativeInput("composition has negative parts")
    s = v.sum(axis=-1)
    bad = np.abs(s - 1.0) > tol
    if np.any(bad):
        where = np.argwhere(np.atleast_1d(bad)).ravel()
        raise NotComposition(
            f"parts sum to {np.atleast_1d(s)[where[0]]!r}, not 1 (row {int(where[0])})"
        )
    # rows already closed to rounding level are left alone so that
    # validation is idempotent (re-dividing can move the last bit)
    s = np.where(np.abs(s - 1.0) <= ROUNDING_SLACK * v.shape[-1], 1.0, s)
    return v / s[..., None]


def is_composition(v, tol: float = SUM_TOL) -> bool:
    v = np.asarray(v, dtype=float)
    return bool(np.all(v >= 0) and np.all(np.abs(v.sum(axis=-1) - 1.0) <= tol))


def kld(y, mu):
    """Kullback-Leibler divergence ``sum_k y_k log(y_k / mu_k)``.

    Terms with ``y_k == 0`` contribute zero.  When ``mu_k == 0`` for some
    ``y_k > 0`` the divergence is ``inf``.  Broadcasts over leading axes.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape[-1] != mu.shape[-1]:
        raise DimMismatch(f"kld between {y.shape[-1]}-part and {mu.shape[-1]}-part compositions")
    pos = y > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pos, y * (np.log(np.where(pos, y, 1.0)) - np.log(mu)), 0.0)
    out = terms.sum(axis=-1)
    # rounding can push an exact match a hair below zero
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def _ilr_basis(D: int) -> np.ndarray:
    """Pivot balance basis: column j turns clr coordinates into ilr_j."""
    V = np.zeros((D, D - 1))
    for j in range(D - 1):
        rest = D - j - 1
        scale = np.sqrt(rest / (rest + 1.0))
        V[j, j] = scale
        V[j + 1 :, j] = -scale / rest
    return V


def ilr(z) -> np.ndarray:
    """Pivot isometric log-ratio coordinates of interior composition(s).

    Coordinate j compares part j with the geometric mean of the parts
    after it, scaled by ``sqrt((D-j-1)/(D-j))`` (0-based j).
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] < 2:
        raise DimMismatch("ilr needs at least two parts")
    if np.any(z <= 0):
        raise BoundaryPoint("ilr is undefined for compositions with zero parts")
    return np.log(z) @ _ilr_basis(z.shape[-1])


def ilr_inverse(coords) -> np.ndarray:
    """Map D-1 real coordinates back to a strictly interior D-part composition."""
    coords = np.asarray(coords, dtype=float)
    D = coords.shape[-1] + 1
    clr = coords @ _ilr_basis(D).T
    clr = clr - clr.max(axis=-1, keepdims=True)
    e = np.exp(clr)
    return e / e.sum(axis=-1, keepdims=True)


def pivot(z, l: int) -> np.ndarray:
    """Move part ``l`` to the front, keeping the others in order."""
    z = np.asarray(z, dtype=float)
    D = z.shape[-1]
    if not 0 <= l < D:
        raise IndexError(f"pivot index {l} out of range for {D} parts")
    order = [l] + [i for i in range(D) if i != l]
    return z[..., order]


@dataclass(frozen=True)
class CompositionDataset:
    """Paired predictor (``X``, N x D_s) and outcome (``Y``, N x D_r) compositions."""

    X: np.ndarray
    Y: np.ndarray
    labels: Sequence[str] | None = None
    x_names: Sequence[str] | None = None
    y_names: Sequence[str] | None = None
    tol: float = field(default=SUM_TOL, repr=False, compare=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if X.shape[0] == 0 or Y.shape[0] == 0:
            raise EmptyData("dataset has no observations")
        if X.shape[0] != Y.shape[0]:
            raise DimMismatch(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        X = as_composition(X, self.tol)
        Y = as_composition(Y, self.tol)
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        for attr, n in (("labels", X.shape[0]), ("x_names", X.shape[1]), ("y_names", Y.shape[1])):
            val = getattr(self, attr)
            if val is not None:
                val = tuple(str(s) for s in val)
                if len(val) != n:
                    raise DimMismatch(f"{attr} has {len(val)} entries, expected {n}")
                object.__setattr__(self, attr, val)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def D_s(self) -> int:
        return self.X.shape[1]

    @property
    def D_r(self) -> int:
        return self.Y.shape[1]

    def subset(self, idx) -> "CompositionDataset":
        idx = np.asarray(idx)
        labels = None if self.labels is None else [self.labels[i] for i in np.arange(self.N)[idx]]
        return CompositionDataset(self.X[idx], self.Y[idx], labels, self.x_names, self.y_names)

    def with_X(self, X) -> "CompositionDataset":
        return CompositionDataset(X, self.Y, self.labels, self.x_names, self.y_names)
