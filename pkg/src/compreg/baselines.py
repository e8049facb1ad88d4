"""Log-ratio baselines: ILR pivot regression and multinomial-logit QML.

Both reject compositions with zero parts in the places they take
logarithms.  That is a real limitation of the approaches, so inputs are
never perturbed or imputed to work around it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryPoint, ConvergenceFailure, DimMismatch, RankDeficient
from .simplex import CompositionDataset, ilr, ilr_inverse, pivot


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    coords = ilr(X)
    return np.column_stack([np.ones(coords.shape[0]), coords])


def _require_interior(A, what):
    if np.any(np.asarray(A) <= 0):
        raise BoundaryPoint(f"{what} contains zero parts; log-ratio models need interior compositions")


@dataclass(frozen=True)
class IlrPivotModel:
    """OLS fits of every pivoted outcome/predictor pair.

    ``coef[l1, l2]`` is a (D_s, D_r - 1) matrix for outcome pivot ``l1`` and
    predictor pivot ``l2``: row 0 holds intercepts, row ``j`` the slopes on
    ``ilr(pivot(x, l2))[j - 1]``.  ``resid_scale`` has one residual standard
    deviation per fitted coordinate.
    """

    coef: np.ndarray
    resid_scale: np.ndarray
    n_obs: int

    @property
    def D_r(self) -> int:
        return self.coef.shape[0]

    @property
    def D_s(self) -> int:
        return self.coef.shape[1]

    @property
    def headline(self) -> np.ndarray:
        """The interpretable coefficients: entry [l1, l2] is the slope of
        outcome balance 1 on predictor balance 1 under those pivots."""
        return self.coef[:, :, 1, 0]

    def predict(self, x) -> np.ndarray:
        return predict_ilr(self, x)


def _ols(Z, T):
    if Z.shape[0] <= Z.shape[1] or np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise RankDeficient(
            f"design with {Z.shape[1]} regressors is rank deficient on {Z.shape[0]} observations"
        )
    beta, *_ = np.linalg.lstsq(Z, T, rcond=None)
    resid = T - Z @ beta
    scale = np.sqrt(np.sum(resid**2, axis=0) / (Z.shape[0] - Z.shape[1]))
    return beta, scale


def fit_ilr_pivot(data: CompositionDataset) -> IlrPivotModel:
    X, Y = data.X, data.Y
    _require_interior(X, "predictor")
    _require_interior(Y, "outcome")
    D_s, D_r = X.shape[1], Y.shape[1]
    if D_r < 2 or D_s < 2:
        raise DimMismatch("ILR regression needs at least two parts on each side")
    coef = np.empty((D_r, D_s, D_s, D_r - 1))
    scale = np.empty((D_r, D_s, D_r - 1))
    designs = [_design(pivot(X, l2)) for l2 in range(D_s)]
    for l1 in range(D_r):
        T = ilr(pivot(Y, l1))
        for l2 in range(D_s):
            coef[l1, l2], scale[l1, l2] = _ols(designs[l2], T)
    coef.setflags(write=False)
    return IlrPivotModel(coef=coef, resid_scale=scale, n_obs=X.shape[0])


def predict_ilr(model: IlrPivotModel, x) -> np.ndarray:
    """Back-transformed linear predictor of the unpivoted sub-model.

    This is ``ilr_inverse(E[ilr(y) | x])``, the plug-in mean; it is not
    ``E[y | x]`` when the ILR-scale errors have non-zero variance.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.D_s:
        raise DimMismatch(f"x has {x.shape[-1]} parts, model expects {model.D_s}")
    _require_interior(x, "predictor")
    return ilr_inverse(_design(np.atleast_2d(x)) @ model.coef[0, 0]).reshape(
        x.shape[:-1] + (model.D_r,)
    )


def ilr_gaussian_loglik(data: CompositionDataset, model: IlrPivotModel | None = None) -> float:
    """Normal log-likelihood of the unpivoted ILR regression at its MLE.

    Coordinates are treated as independent with their own variance, so the
    maximised value is ``-N/2 * sum_k (log(2 pi RSS_k / N) + 1)``.
    """
    X, Y = data.X, data.Y
    _require_interior(Y, "outcome")
    T = ilr(Y)
    if model is None:
        _require_interior(X, "predictor")
        Z = _design(X)
        beta, *_ = np.linalg.lstsq(Z, T, rcond=None)
    else:
        Z = _design(X)
        beta = model.coef[0, 0]
    rss = np.sum((T - Z @ beta) ** 2, axis=0)
    N = X.shape[0]
    return float(-0.5 * N * np.sum(np.log(2 * np.pi * rss / N) + 1.0))


def ilr_gaussian_null_loglik(data: CompositionDataset) -> float:
    """Same likelihood with intercepts only."""
    T = ilr(np.asarray(data.Y))
    rss = np.sum((T - T.mean(axis=0)) ** 2, axis=0)
    N = T.shape[0]
    return float(-0.5 * N * np.sum(np.log(2 * np.pi * rss / N) + 1.0))


# ---------------------------------------------------------------------------
# multinomial logit, quasi-likelihood


def _softmax_ref_last(eta):
    full = np.concatenate([eta, np.zeros(eta.shape[:-1] + (1,))], axis=-1)
    full -= full.max(axis=-1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class LogitQmlModel:
    """Multinomial-logit mean on ``t(x) = ilr(x)``, last outcome part as reference.

    ``coef`` is (D_s, D_r - 1): row 0 intercepts, rows 1.. slopes.
    """

    coef: np.ndarray
    loglik: float = float("nan")
    iterations: int = 0
    gradient_norm: float = float("nan")
    converged: bool = True
    gradient_fallback: bool = field(default=False)

    @property
    def D_s(self) -> int:
        return self.coef.shape[0]

    @property
    def D_r(self) -> int:
        return self.coef.shape[1] + 1

    def predict(self, x) -> np.ndarray:
        return predict_logit(self, x)


def logit_quasi_loglik(coef, Z, Y) -> float:
    P = _softmax_ref_last(Z @ coef)
    pos = Y > 0
    return float(np.sum(Y[pos] * np.log(P[pos])))


def logit_gradient(coef, Z, Y) -> np.ndarray:
    P = _softmax_ref_last(Z @ coef)
    K = coef.shape[1]
    return Z.T @ (Y[:, :K] - P[:, :K])


def _logit_hessian(coef, Z):
    P = _softmax_ref_last(Z @ coef)[:, :-1]
    K = P.shape[1]
    W = P[:, :, None] * (np.eye(K)[None] - P[:, None, :])
    H = -np.einsum("ia,ib,ikl->akbl", Z, Z, W)
    n = Z.shape[1] * K
    return H.reshape(n, n)


def fit_logit_qml(
    data: CompositionDataset,
    max_iter: int = 100,
    tol: float = 1e-8,
    init=None,
) -> LogitQmlModel:
    """Newton-Raphson on the multinomial quasi-likelihood with step halving.

    Starts from zero coefficients unless ``init`` is given.  Converged when
    the gradient norm drops below ``tol``.  A singular Hessian falls back to
    a gradient-ascent step and sets ``gradient_fallback``.
    """
    X, Y = data.X, data.Y
    _require_interior(X, "predictor")
    Z = _design(X)
    D_s, K = Z.shape[1], Y.shape[1] - 1
    if K < 1:
        raise DimMismatch("logit model needs at least two outcome parts")
    coef = np.zeros((D_s, K)) if init is None else np.array(init, dtype=float).reshape(D_s, K)
    ll = logit_quasi_loglik(coef, Z, Y)
    fallback = False
    for it in range(max_iter + 1):
        g = logit_gradient(coef, Z, Y)
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            return LogitQmlModel(coef, ll, it, gnorm, True, fallback)
        if it == max_iter:
            break
        H = _logit_hessian(coef, Z)
        try:
            step = np.linalg.solve(-H, g.ravel())
            if not np.all(np.isfinite(step)) or step @ g.ravel() <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = g.ravel()
            fallback = True
        step = step.reshape(D_s, K)
        # near the optimum the gain drops below rounding error of ll itself
        slack = 1e-12 * max(1.0, abs(ll))
        t = 1.0
        for _ in range(31):
            cand = coef + t * step
            ll_cand = logit_quasi_loglik(cand, Z, Y)
            if ll_cand >= ll - slack:
                break
            t *= 0.5
        else:
            # no ascent along the step; the iterate is as good as it gets
            break
        coef, ll = cand, ll_cand
    last = LogitQmlModel(coef, ll, it, gnorm, False, fallback)
    raise ConvergenceFailure(
        f"logit QML did not reach gradient norm {tol:g} in {it} iterations (norm {gnorm:.3g})",
        last=last,
    )


def predict_logit(model: LogitQmlModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.D_s:
        raise DimMismatch(f"x has {x.shape[-1]} parts, model expects {model.D_s}")
    _require_interior(x, "predictor")
    out = _softmax_ref_last(_design(np.atleast_2d(x)) @ model.coef)
    return out.reshape(x.shape[:-1] + (model.D_r,))
