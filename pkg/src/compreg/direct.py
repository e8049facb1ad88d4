"""Direct (transformation-free) regression of a composition on a composition.

The model is ``E[y | x] = B' x`` with ``B`` a D_s x D_r row-stochastic
matrix.  ``B`` is estimated by maximising the multinomial quasi-likelihood

    sum_i sum_k y_ik log(sum_j B_jk x_ij)

with an EM algorithm whose E and M steps are both closed form.  Each row
``B[j]`` is the expected outcome when the predictor sits at vertex ``j``,
so contrasts between rows read directly as shifts in ``E[y]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DimMismatch, EmptyData, RowStarvation, SupportError
from .simplex import CompositionDataset, as_composition

ROW_TOL = 1e-9


class RowMergeWarning(UserWarning):
    """Rows being merged are not equal, so the merged model is only approximate."""


def as_transition_matrix(B, tol: float = ROW_TOL) -> np.ndarray:
    """Validate a row-stochastic matrix and return a read-only float copy."""
    B = np.array(B, dtype=float)
    if B.ndim != 2:
        raise DimMismatch(f"transition matrix must be 2-D, got shape {B.shape}")
    B = as_composition(B, tol)
    B.setflags(write=False)
    return B


def uniform_init(D_s: int, D_r: int) -> np.ndarray:
    return np.full((D_s, D_r), 1.0 / D_r)


def _xy(data):
    if isinstance(data, CompositionDataset):
        return data.X, data.Y
    X, Y = data
    return np.asarray(X, dtype=float), np.asarray(Y, dtype=float)


def _check_conformable(B, X, Y):
    if B.shape != (X.shape[-1], Y.shape[-1]):
        raise DimMismatch(
            f"B has shape {B.shape}, data needs ({X.shape[-1]}, {Y.shape[-1]})"
        )


def quasi_loglik(B, data) -> float:
    """Multinomial quasi-log-likelihood of ``B``; ``-inf`` on a support violation."""
    X, Y = _xy(data)
    B = np.asarray(B, dtype=float)
    _check_conformable(B, X, Y)
    mu = X @ B
    pos = Y > 0
    if np.any(mu[pos] <= 0):
        return -np.inf
    # correctly rounded sum: keeps likelihood comparisons exact to ~1 ulp at large N
    return math.fsum(Y[pos] * np.log(mu[pos]))


def e_step(B, data) -> np.ndarray:
    """Responsibilities ``w[i, j, k] = x_ij B_jk / sum_j x_ij B_jk``.

    Where the denominator vanishes and ``y_ik == 0`` the weights are unused;
    they are set to ``x_ij`` so every (i, k) slice still sums to one.
    """
    X, Y = _xy(data)
    B = np.asarray(B, dtype=float)
    _check_conformable(B, X, Y)
    joint = X[:, :, None] * B[None, :, :]
    denom = joint.sum(axis=1, keepdims=True)
    dead = denom[:, 0, :] <= 0
    if np.any(dead & (Y > 0)):
        i, k = np.argwhere(dead & (Y > 0))[0]
        raise SupportError(f"outcome part {k} of observation {i} has zero predicted mass")
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(dead[:, None, :], X[:, :, None], joint / denom)
    return w


def m_step(weights, data) -> np.ndarray:
    """Row-wise weighted multinomial update ``B_jk ∝ sum_i y_ik w_ijk``."""
    X, Y = _xy(data)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (X.shape[0], X.shape[1], Y.shape[1]):
        raise DimMismatch(f"weights shape {weights.shape} does not match data")
    num = np.einsum("ik,ijk->jk", Y, weights)
    denom = num.sum(axis=1, keepdims=True)
    starved = np.flatnonzero(denom[:, 0] <= 0)
    if starved.size:
        raise RowStarvation(starved)
    return num / denom


@dataclass(frozen=True)
class EmState:
    B: np.ndarray
    objective: float
    iteration: int
    weights: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class FitResult:
    B_hat: np.ndarray
    final_objective: float
    iterations: int
    converged: bool
    objective_trace: np.ndarray = field(repr=False)
    starved_rows: tuple = ()

    def predict(self, x) -> np.ndarray:
        return predict(self.B_hat, x)


def _em_update(X, Y, pos, B):
    """One fused EM iteration on stacked problems.

    ``X`` is (P, N, D_s), ``B`` is (P, D_s, D_r).  Returns the objective at
    ``B`` and the updated matrices.  Rows whose update has no mass keep their
    current values; the returned mask marks them.

    The responsibilities never need materialising:
    ``sum_i y_ik w_ijk = B_jk * sum_i x_ij y_ik / mu_ik``.
    """
    mu = X @ B
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pos, Y / mu, 0.0)
        logmu = np.where(pos, np.log(mu), 0.0)
    f = np.sum(Y * logmu, axis=(-2, -1))
    num = B * (np.swapaxes(X, -1, -2) @ ratio)
    denom = num.sum(axis=-1, keepdims=True)
    starved = denom[..., 0] <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        B_new = np.where(denom > 0, num / denom, B)
    return f, B_new, starved


def _resolve_init(init, D_s, D_r):
    if init is None or (isinstance(init, str) and init == "uniform"):
        return uniform_init(D_s, D_r)
    B0 = as_transition_matrix(init)
    if B0.shape != (D_s, D_r):
        raise DimMismatch(f"initial B has shape {B0.shape}, expected ({D_s}, {D_r})")
    return np.array(B0)


def fit(data, init="uniform", tol: float = 1e-10, max_iter: int = 10_000) -> FitResult:
    """Estimate ``B`` by EM.

    Iterates until two successive objective values differ by less than
    ``tol``.  Hitting ``max_iter`` returns a result with ``converged=False``.
    Predictor parts that are zero in every observation leave their row of
    ``B`` at the initial value; their indices are reported in
    ``starved_rows``.
    """
    X, Y = _xy(data)
    if X.shape[0] == 0:
        raise EmptyData("cannot fit an empty dataset")
    B = _resolve_init(init, X.shape[1], Y.shape[1])
    _check_conformable(B, X, Y)
    if not np.isfinite(quasi_loglik(B, (X, Y))):
        raise SupportError("initial B gives zero predicted mass to an observed outcome part")

    X3 = X[None]
    B3 = B[None].copy()
    pos = Y > 0
    trace = []
    starved_any = np.zeros(X.shape[1], dtype=bool)
    converged = False
    f_prev = None
    for it in range(max_iter + 1):
        f, B_new, starved = _em_update(X3, Y, pos, B3)
        f = float(f[0])
        trace.append(f)
        if f_prev is not None and abs(f - f_prev) < tol:
            converged = True
            break
        if it == max_iter:
            break
        f_prev = f
        starved_any |= starved[0]
        B3 = B_new
    B_hat = B3[0]
    B_hat.setflags(write=False)
    return FitResult(
        B_hat=B_hat,
        final_objective=trace[-1],
        iterations=len(trace) - 1,
        converged=converged,
        objective_trace=np.asarray(trace),
        starved_rows=tuple(int(j) for j in np.flatnonzero(starved_any)),
    )


def fit_batch(X_stack, Y, tol: float = 1e-10, max_iter: int = 10_000):
    """Fit a stack of problems at once, all from the uniform start.

    ``X_stack`` is (P, N, D_s); ``Y`` is either one (N, D_r) outcome matrix
    shared by every problem or a (P, N, D_r) stack.  Each slice follows
    exactly the iteration sequence :func:`fit` would take; finished slices
    are frozen while the rest continue.

    Returns ``(B_hat, objective, iterations, converged, starved)`` with a
    leading axis of length P; ``starved`` flags problems in which some row
    never received mass.
    """
    X_stack = np.asarray(X_stack, dtype=float)
    Y = np.asarray(Y, dtype=float)
    P, _, D_s = X_stack.shape
    D_r = Y.shape[-1]
    shared = Y.ndim == 2
    pos = Y > 0
    B = np.broadcast_to(uniform_init(D_s, D_r), (P, D_s, D_r)).copy()
    f_prev = np.full(P, np.nan)
    f_out = np.full(P, np.nan)
    iters = np.zeros(P, dtype=int)
    done = np.zeros(P, dtype=bool)
    starved_any = np.zeros(P, dtype=bool)
    for it in range(max_iter + 1):
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        if shared:
            f, B_new, starved = _em_update(X_stack[active], Y, pos, B[active])
        else:
            f, B_new, starved = _em_update(X_stack[active], Y[active], pos[active], B[active])
        f_out[active] = f
        iters[active] = it
        stop = np.abs(f - f_prev[active]) < tol
        done[active[stop]] = True
        if it == max_iter:
            break
        go = active[~stop]
        B[go] = B_new[~stop]
        starved_any[go] |= starved[~stop].any(axis=-1)
        f_prev[active] = f
    return B, f_out, iters, done, starved_any


def iterate_em(data, init="uniform") -> Iterator[EmState]:
    """Yield the EM states B^(0), B^(1), ... with explicit responsibilities.

    Uses :func:`e_step` and :func:`m_step` directly; useful for inspecting
    the algorithm.  The generator is infinite.
    """
    X, Y = _xy(data)
    B = _resolve_init(init, X.shape[1], Y.shape[1])
    t = 0
    while True:
        w = e_step(B, (X, Y))
        yield EmState(B=B, objective=quasi_loglik(B, (X, Y)), iteration=t, weights=w)
        B = m_step(w, (X, Y))
        t += 1


def predict(B, x) -> np.ndarray:
    """Conditional mean ``B' x`` for one composition or a stack of rows."""
    B = np.asarray(B, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != B.shape[0]:
        raise DimMismatch(f"x has {x.shape[-1]} parts, B has {B.shape[0]} rows")
    return x @ B


def contrast(B, j: int, k: int, delta: float = 0.1) -> np.ndarray:
    """Shift in ``E[y]`` when ``x_j`` grows by ``delta`` at the expense of ``x_k``."""
    B = np.asarray(B, dtype=float)
    for idx in (j, k):
        if not 0 <= idx < B.shape[0]:
            raise IndexError(f"row index {idx} out of range for {B.shape[0]} rows")
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    return delta * (B[j] - B[k])


def aggregate_predictor_rows(B, j1: int, j2: int, atol: float = 1e-6) -> np.ndarray:
    """Merge predictor parts ``j1`` and ``j2`` into one row (kept at ``min(j1, j2)``).

    The merge is exact only when the two rows are equal; otherwise the plain
    average is used and :class:`RowMergeWarning` is emitted.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    for idx in (j1, j2):
        if not 0 <= idx < n:
            raise IndexError(f"row index {idx} out of range for {n} rows")
    if j1 == j2:
        raise ValueError("cannot merge a row with itself")
    if np.max(np.abs(B[j1] - B[j2])) > atol:
        warnings.warn(
            f"rows {j1} and {j2} differ by up to {np.max(np.abs(B[j1] - B[j2])):.3g}; "
            "merging them changes the model",
            RowMergeWarning,
            stacklevel=2,
        )
    lo, hi = sorted((j1, j2))
    out = np.delete(B, hi, axis=0)
    out[lo] = 0.5 * (B[j1] + B[j2])
    return out


def aggregate_outcome_cols(B, k1: int, k2: int) -> np.ndarray:
    """Sum outcome parts ``k1`` and ``k2`` (kept at ``min(k1, k2)``)."""
    B = np.asarray(B, dtype=float)
    n = B.shape[1]
    for idx in (k1, k2):
        if not 0 <= idx < n:
            raise IndexError(f"column index {idx} out of range for {n} columns")
    if k1 == k2:
        raise ValueError("cannot merge a column with itself")
    lo, hi = sorted((k1, k2))
    out = np.delete(B, hi, axis=1)
    out[:, lo] = B[:, k1] + B[:, k2]
    return out


def aggregate_parts(x, k1: int, k2: int) -> np.ndarray:
    """Sum parts ``k1`` and ``k2`` of composition(s), mirroring :func:`aggregate_outcome_cols`."""
    x = np.asarray(x, dtype=float)
    lo, hi = sorted((k1, k2))
    out = np.delete(x, hi, axis=-1)
    out[..., lo] = x[..., k1] + x[..., k2]
    return out
