"""Weighted pooled logistic regression by damped Newton iterations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr
from scipy.special import expit, log_expit

PROB_CLAMP = 1e-15
# Linear predictors beyond this magnitude mean a fitted probability within
# the clamp of 0 or 1; reaching it while the score is still large is taken as
# separation.
ETA_SEPARATION = 40.0
# Relative size of a pivoted-QR diagonal below which a column is taken as a
# linear combination of the preceding ones.
ALIAS_TOL = 1e-9


class GlmError(ArithmeticError):
    pass


class NonConvergence(GlmError):
    pass


class CompleteSeparation(GlmError):
    def __init__(self, column: str, message: str | None = None):
        self.column = column
        super().__init__(message or f"complete or quasi-complete separation; diverging column {column!r}")


@dataclass(frozen=True)
class GlmFit:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    loglik: float
    columns: tuple[str, ...]
    max_score: float
    aliased: tuple[str, ...] = ()

    @property
    def width(self) -> int:
        return len(self.coefficients)

    def linear_predictor(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.width:
            raise ValueError(f"design width {X.shape[1]} does not match fit width {self.width}")
        return X @ self.coefficients

    def as_dict(self) -> dict:
        return {
            "coefficients": dict(zip(self.columns, map(float, self.coefficients))),
            "converged": self.converged,
            "iterations": self.iterations,
            "loglik": self.loglik,
            "max_score": self.max_score,
            "aliased": list(self.aliased),
        }


def predict_prob(fit: GlmFit, X) -> np.ndarray:
    """``expit(X @ coef)`` clamped to ``[1e-15, 1 - 1e-15]``."""
    return np.clip(expit(fit.linear_predictor(X)), PROB_CLAMP, 1.0 - PROB_CLAMP)


def loglik(coef, X, y, w) -> float:
    eta = X @ coef
    return float(np.sum(w * (y * log_expit(eta) + (1.0 - y) * log_expit(-eta))))


def score(coef, X, y, w) -> np.ndarray:
    """Gradient of the weighted log-likelihood, ``sum_i w_i (y_i - p_i) x_i``."""
    return X.T @ (w * (y - expit(X @ coef)))


def independent_columns(Xs: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Mask of a maximal linearly independent set of (scaled) design columns.

    Columns are ranked by a pivoted QR of the weighted design; a column that
    is (numerically) a combination of higher-ranked ones, or identically
    zero, is dropped.
    """
    p = Xs.shape[1]
    if p == 0:
        return np.zeros(0, dtype=bool)
    R, piv = qr(Xs * np.sqrt(w / w.sum())[:, None], mode="r", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > ALIAS_TOL * d[0])) if d[0] > 0 else 0
    mask = np.zeros(p, dtype=bool)
    mask[piv[:rank]] = True
    return mask


def fit_pooled_logistic(
    X,
    y,
    weights=None,
    *,
    columns=None,
    tol: float = 1e-8,
    max_iter: int = 100,
    ridge: float = 1e-10,
) -> GlmFit:
    """Maximise the case-weighted Bernoulli log-likelihood.

    Parameters
    ----------
    X : (n, p) array
        Design matrix.
    y : (n,) array of {0, 1}
    weights : (n,) array, optional
        Nonnegative case weights; rows with zero weight are ignored.
    tol : float
        Convergence threshold on the largest absolute score component.
    ridge : float
        Added to the diagonal of the (column-scaled) information matrix, so
        that collinear or empty columns keep a zero step.

    Returns
    -------
    GlmFit

    Raises
    ------
    CompleteSeparation
        Linear predictors diverge; the error names the column with the
        largest scaled coefficient.
    NonConvergence
        No convergence within ``max_iter`` Newton steps.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    columns = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(p))
    if len(y) != n or len(w) != n:
        raise ValueError("design, outcome and weights must have the same number of rows")
    if len(columns) != p:
        raise ValueError("column names do not match design width")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("case weights must be finite and nonnegative")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("outcome must be binary")
    keep = w > 0
    if not keep.all():
        X, y, w = X[keep], y[keep], w[keep]
    wsum = w.sum()
    if wsum <= 0 or not (np.any(y == 1) and np.any(y == 0)):
        raise CompleteSeparation("(intercept)" if p else "", "weighted outcome has a single level")

    scale = np.sqrt((w @ (X * X)) / wsum)
    scale[scale == 0] = 1.0
    Xfull = X / scale
    active = independent_columns(Xfull, w)
    Xs = Xfull[:, active]
    scale_full, scale = scale, scale[active]
    p = int(active.sum())

    def state(b):
        eta = Xs @ b
        prob = expit(eta)
        g = Xs.T @ (w * (y - prob))
        ll = float(np.sum(w * (y * log_expit(eta) + (1.0 - y) * log_expit(-eta))))
        return eta, prob, g, ll

    beta = np.zeros(p)
    eta, prob, g, ll = state(beta)
    it = 0
    converged = False
    eye = ridge * np.eye(p)
    # rounding floor of the score sums: below it, further steps only shuffle noise
    floor = max(tol, 1e-13 * float(np.max(np.abs(Xs).T @ w, initial=0.0)) * float(np.max(scale, initial=1.0)))
    gain = np.inf
    while it < max_iter:
        size = np.max(np.abs(g * scale), initial=0.0)
        if size < tol or (size < floor and gain <= 1e-13 * abs(ll)):
            converged = True
            break
        it += 1
        info = (Xs * (w * prob * (1.0 - prob))[:, None]).T @ Xs + eye
        step = np.linalg.lstsq(info, g, rcond=1e-12)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            c_eta, c_prob, c_g, c_ll = state(cand)
            if c_ll >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        gain = abs(c_ll - ll)
        beta, eta, prob, g, ll = cand, c_eta, c_prob, c_g, c_ll
        if np.max(np.abs(eta)) > ETA_SEPARATION and np.max(np.abs(g * scale)) >= floor:
            raise CompleteSeparation(_active_name(columns, active, beta))

    if converged:
        # extra Newton steps drive the score to rounding level
        best = np.max(np.abs(g * scale), initial=0.0)
        for _ in range(5):
            if best == 0.0:
                break
            info = (Xs * (w * prob * (1.0 - prob))[:, None]).T @ Xs + eye
            step = np.linalg.lstsq(info, g, rcond=1e-12)[0]
            cand = beta + step
            c_eta, c_prob, c_g, c_ll = state(cand)
            c_best = np.max(np.abs(c_g * scale), initial=0.0)
            if not c_best < best:
                break
            beta, eta, prob, g, ll, best = cand, c_eta, c_prob, c_g, c_ll, c_best
            it += 1
    else:
        if np.max(np.abs(eta)) > ETA_SEPARATION / 2:
            raise CompleteSeparation(_active_name(columns, active, beta))
        raise NonConvergence(
            f"no convergence after {max_iter} iterations (max |score| = {np.max(np.abs(g * scale)):.3g})"
        )

    coef = np.zeros(len(columns))
    coef[active] = beta / scale
    full_score = Xfull.T @ (w * (y - prob)) * scale_full
    aliased = tuple(c for c, a in zip(columns, active) if not a)
    return GlmFit(coef, converged, it, ll, columns, float(np.max(np.abs(full_score), initial=0.0)), aliased)


def _active_name(columns, active, beta) -> str:
    return [c for c, a in zip(columns, active) if a][int(np.argmax(np.abs(beta)))]


@dataclass(frozen=True)
class RowGroups:
    """Distinct ``(x, y)`` rows of a design and each row's group.

    The weighted likelihood only depends on the total weight per distinct
    row, so fitting on ``(X, y, bincount(index, w))`` gives the same MLE.
    """

    X: np.ndarray
    y: np.ndarray
    index: np.ndarray

    def weights(self, w) -> np.ndarray:
        return np.bincount(self.index, weights=w, minlength=len(self.y))


def group_rows(X, y, max_ratio: float = 0.5) -> RowGroups | None:
    """Group identical rows; ``None`` when fewer than ``1 - max_ratio`` rows would merge."""
    A = np.ascontiguousarray(np.column_stack([np.asarray(X, float), np.asarray(y, float)]))
    if A.shape[0] == 0:
        return None
    A[A == 0.0] = 0.0  # fold -0.0 into 0.0
    v = A.view(np.dtype((np.void, A.dtype.itemsize * A.shape[1]))).ravel()
    _, first, inv = np.unique(v, return_index=True, return_inverse=True)
    if len(first) > max_ratio * A.shape[0]:
        return None
    return RowGroups(A[first, :-1].copy(), A[first, -1].copy(), inv.reshape(-1))
