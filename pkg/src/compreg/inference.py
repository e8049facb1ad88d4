"""Permutation test of linear independence and bootstrap regions for rows of B.

Resampling replicates draw from their own child of a
:class:`numpy.random.SeedSequence`, so replicate ``b`` sees the same
random stream whatever the chunking or thread count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import baselines
from .direct import fit, fit_batch, predict
from .errors import CompregError, DegenerateInput, EmptyData, ReplicateError, UnsupportedDimension
from .simplex import CompositionDataset

CHUNK = 100
MODELS = ("direct", "ilr", "logit")


def make_seed(seed=None) -> int:
    """Return ``seed`` unchanged, or fresh OS entropy when it is None."""
    if seed is None:
        return int(np.random.SeedSequence().entropy)
    return int(seed)


def replicate_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def fit_null(data: CompositionDataset) -> np.ndarray:
    """Equal-rows (independence) fit: the componentwise mean outcome."""
    if data.N == 0:
        raise EmptyData("cannot fit an empty dataset")
    return data.Y.mean(axis=0)


def null_loglik(data: CompositionDataset) -> float:
    """``sum_i sum_k y_ik log(ybar_k)``, the quasi-likelihood under independence."""
    Y = data.Y
    ybar = Y.mean(axis=0)
    pos = Y > 0
    return math.fsum(Y[pos] * np.log(np.broadcast_to(ybar, Y.shape)[pos]))


def null_matrix(data: CompositionDataset) -> np.ndarray:
    """The D_s x D_r matrix with every row equal to the mean outcome."""
    return np.tile(fit_null(data), (data.D_s, 1))


def _direct_stat(data, tol=1e-10, max_iter=10_000):
    return fit(data, tol=tol, max_iter=max_iter).final_objective - null_loglik(data)


def _logit_stat(data, tol=1e-8, max_iter=100):
    m = baselines.fit_logit_qml(data, max_iter=max_iter, tol=tol)
    return m.loglik - null_loglik(data)


def _ilr_stat(data, **_):
    return baselines.ilr_gaussian_loglik(data) - baselines.ilr_gaussian_null_loglik(data)


_STATS: dict[str, Callable] = {"direct": _direct_stat, "logit": _logit_stat, "ilr": _ilr_stat}


def lambda_statistic(data: CompositionDataset, model: str = "direct", **fit_opts) -> float:
    """Log quasi-likelihood ratio of the fitted model against independence.

    ``model="direct"`` is the direct regression.  ``"logit"`` swaps in the
    logit quasi-likelihood, ``"ilr"`` the Gaussian likelihood of the ILR
    regression against its intercept-only fit.
    """
    try:
        stat = _STATS[model]
    except KeyError:
        raise ValueError(f"unknown model {model!r}; choose from {MODELS}") from None
    return stat(data, **fit_opts)


@dataclass(frozen=True)
class IndependenceTestResult:
    lambda_obs: float
    lambda_perm: np.ndarray = field(repr=False)
    p_value: float
    p_value_add_one: float
    n_permutations: int
    seed: int
    model: str = "direct"


def _run_chunks(jobs, n_jobs):
    if n_jobs is None or n_jobs == 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(lambda job: job(), jobs))


def permutation_test(
    data: CompositionDataset,
    n_permutations: int = 1000,
    seed=None,
    model: str = "direct",
    n_jobs: int = 1,
    **fit_opts,
) -> IndependenceTestResult:
    """Monte-Carlo permutation test of ``H0: all rows of B are equal``.

    Rows of X are shuffled against fixed Y.  The p-value is the fraction of
    permuted statistics at least as large as the observed one (which can
    be 0); ``p_value_add_one`` is ``(b + 1) / (B + 1)``.
    """
    if n_permutations < 1:
        raise ValueError("need at least one permutation")
    seed = make_seed(seed)
    lam_obs = lambda_statistic(data, model, **fit_opts)
    rngs = replicate_rngs(seed, n_permutations)
    perms = [rng.permutation(data.N) for rng in rngs]
    X, Y = data.X, data.Y

    if model == "direct":
        tol = fit_opts.get("tol", 1e-10)
        max_iter = fit_opts.get("max_iter", 10_000)
        pll0 = null_loglik(data)

        def chunk(lo):
            idx = np.stack(perms[lo : lo + CHUNK])
            _, f, *_ = fit_batch(X[idx], Y, tol=tol, max_iter=max_iter)
            return f - pll0

    else:

        def chunk(lo):
            out = []
            for b in range(lo, min(lo + CHUNK, n_permutations)):
                try:
                    out.append(lambda_statistic(data.with_X(X[perms[b]]), model, **fit_opts))
                except CompregError as exc:
                    raise ReplicateError(b, exc) from exc
            return np.asarray(out)

    jobs = [lambda lo=lo: chunk(lo) for lo in range(0, n_permutations, CHUNK)]
    lam_perm = np.concatenate(_run_chunks(jobs, n_jobs))
    exceed = int(np.sum(lam_perm >= lam_obs))
    return IndependenceTestResult(
        lambda_obs=float(lam_obs),
        lambda_perm=lam_perm,
        p_value=exceed / n_permutations,
        p_value_add_one=(exceed + 1) / (n_permutations + 1),
        n_permutations=n_permutations,
        seed=seed,
        model=model,
    )


@dataclass(frozen=True)
class BootstrapResult:
    """Case-resampled refits of B.

    ``replicates`` is (R_kept, D_s, D_r); ``R`` counts requested replicates,
    ``dropped_count`` those discarded because a row of B was unidentifiable
    in the resample.
    """

    replicates: np.ndarray = field(repr=False)
    R: int
    seed: int
    point_estimate: np.ndarray = field(repr=False)
    region_level: float = 0.95
    dropped_count: int = 0
    kept_index: np.ndarray = field(default=None, repr=False)


def bootstrap_rows(
    data: CompositionDataset,
    R: int = 1000,
    seed=None,
    region_level: float = 0.95,
    n_jobs: int = 1,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> BootstrapResult:
    """Nonparametric pairs bootstrap of the direct-regression estimate."""
    if R < 1:
        raise ValueError("need at least one bootstrap replicate")
    if not 0 < region_level < 1:
        raise ValueError("region_level must lie in (0, 1)")
    seed = make_seed(seed)
    rngs = replicate_rngs(seed, R)
    draws = [rng.integers(0, data.N, size=data.N) for rng in rngs]
    X, Y = data.X, data.Y
    point = fit(data, tol=tol, max_iter=max_iter).B_hat

    def chunk(lo):
        idx = np.stack(draws[lo : lo + CHUNK])
        B, _, _, _, starved = fit_batch(X[idx], Y[idx], tol=tol, max_iter=max_iter)
        return B, starved

    parts = _run_chunks([lambda lo=lo: chunk(lo) for lo in range(0, R, CHUNK)], n_jobs)
    B_all = np.concatenate([p[0] for p in parts])
    starved = np.concatenate([p[1] for p in parts])
    kept = np.flatnonzero(~starved)
    dropped = R - kept.size
    if dropped > 0.05 * R:
        warnings.warn(
            f"{dropped} of {R} bootstrap replicates dropped (unidentifiable rows)",
            RuntimeWarning,
            stacklevel=2,
        )
    return BootstrapResult(
        replicates=B_all[kept],
        R=R,
        seed=seed,
        point_estimate=point,
        region_level=region_level,
        dropped_count=int(dropped),
        kept_index=kept,
    )


# ---------------------------------------------------------------------------
# ternary geometry and hull peeling

SQRT3_2 = np.sqrt(3.0) / 2.0


def ternary_xy(z) -> np.ndarray:
    """Cartesian position of 3-part composition(s) in an equilateral triangle.

    Part 0 sits at (0, 0), part 1 at (1, 0), part 2 at (1/2, sqrt(3)/2).
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != 3:
        raise UnsupportedDimension(f"ternary coordinates need 3 parts, got {z.shape[-1]}")
    return np.stack([z[..., 1] + 0.5 * z[..., 2], SQRT3_2 * z[..., 2]], axis=-1)


def ternary_to_composition(xy) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    c = xy[..., 1] / SQRT3_2
    b = xy[..., 0] - 0.5 * c
    z = np.stack([1.0 - b - c, b, c], axis=-1)
    # vertices on an edge come back with rounding-level negatives
    z = np.where(np.abs(z) < 1e-12, 0.0, z)
    return z / z.sum(axis=-1, keepdims=True)


def _hull_vertices(pts: np.ndarray) -> np.ndarray:
    """Indices of hull vertices of ``pts`` in counter-clockwise order.

    Degenerate clouds are handled: coincident points give one vertex,
    collinear points the two extremes.
    """
    uniq, first = np.unique(np.round(pts, 15), axis=0, return_index=True)
    if len(uniq) == 1:
        return first[:1]
    try:
        return ConvexHull(pts).vertices
    except (QhullError, ValueError):
        centred = pts - pts.mean(axis=0)
        direction = np.linalg.svd(centred, full_matrices=False)[2][0]
        proj = centred @ direction
        return np.unique([int(np.argmin(proj)), int(np.argmax(proj))])


def peel_hull(pts, level: float = 0.95) -> np.ndarray:
    """Peel convex-hull layers while at least ``level`` of the points remain.

    Returns the vertex coordinates of the innermost hull that still holds
    ``ceil(level * n)`` points, counter-clockwise.
    """
    pts = np.asarray(pts, dtype=float)
    n = len(pts)
    target = int(np.ceil(level * n - 1e-9))
    remaining = np.arange(n)
    while True:
        verts = remaining[_hull_vertices(pts[remaining])]
        # points coincident with a hull vertex belong to the same layer
        on_hull = (pts[remaining][:, None, :] == pts[verts][None, :, :]).all(-1).any(1)
        left = remaining[~on_hull]
        if left.size < target or left.size == 0:
            return pts[verts]
        remaining = left


def region_coordinates(boot: BootstrapResult, row: int, level: float | None = None) -> np.ndarray:
    """Ternary (x, y) vertices of the peeled-hull confidence region for ``B[row]``."""
    if boot.replicates.shape[-1] != 3:
        raise UnsupportedDimension(
            f"ternary regions need 3 outcome parts, got {boot.replicates.shape[-1]}"
        )
    if not 0 <= row < boot.replicates.shape[1]:
        raise IndexError(f"row {row} out of range")
    level = boot.region_level if level is None else level
    return peel_hull(ternary_xy(boot.replicates[:, row, :]), level)


def polygon_area(xy) -> float:
    xy = np.asarray(xy, dtype=float)
    if len(xy) < 3:
        return 0.0
    x, y = xy[:, 0], xy[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, 1)) - np.dot(y, np.roll(x, 1))))


def point_in_polygon(pt, poly, atol: float = 1e-12) -> bool:
    """Whether ``pt`` lies in the convex polygon ``poly`` (CCW vertices), boundary included."""
    poly = np.asarray(poly, dtype=float)
    pt = np.asarray(pt, dtype=float)
    if len(poly) == 1:
        return bool(np.allclose(pt, poly[0], atol=atol))
    if len(poly) == 2:
        a, b = poly
        ab, ap = b - a, pt - a
        cross = ab[0] * ap[1] - ab[1] * ap[0]
        t = np.dot(ap, ab) / np.dot(ab, ab)
        return bool(abs(cross) <= atol and -atol <= t <= 1 + atol)
    nxt = np.roll(poly, -1, axis=0)
    edge = nxt - poly
    rel = pt - poly
    cross = edge[:, 0] * rel[:, 1] - edge[:, 1] * rel[:, 0]
    return bool(np.all(cross >= -atol))


# ---------------------------------------------------------------------------
# leave-one-out cross-validation


def loocv_predictions(data: CompositionDataset, model: str = "direct"):
    """Held-out prediction of every observation from a fit on the others.

    Returns ``(pred, ok)``: ``pred`` is (N, D_r) with NaN rows where the
    model could not be fitted or applied (e.g. zeros for a log-ratio
    model), flagged ``False`` in ``ok``.
    """
    if data.N < 2:
        raise DegenerateInput("leave-one-out needs at least two observations")
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; choose from {MODELS}")
    pred = np.full(data.Y.shape, np.nan)
    ok = np.zeros(data.N, dtype=bool)
    for i in range(data.N):
        train = data.subset(np.arange(data.N) != i)
        x = data.X[i]
        try:
            if model == "direct":
                pred[i] = predict(fit(train).B_hat, x)
            elif model == "ilr":
                pred[i] = baselines.fit_ilr_pivot(train).predict(x)
            else:
                pred[i] = baselines.fit_logit_qml(train).predict(x)
            ok[i] = True
        except CompregError:
            continue
    return pred, ok
