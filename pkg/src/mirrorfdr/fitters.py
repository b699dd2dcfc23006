"""LASSO screening, OLS inference and residual-variance estimation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, stats

from ._cd import cd_path
from .datagen import FOLDS, ConfigError, stream_rng

N_LAMBDA = 100
LAMBDA_MIN_RATIO = 1e-3
CD_TOL = 1e-7
# fold paths and the warm-start walk down to the chosen penalty only need
# predictions, not a certified optimum
PATH_TOL = 1e-5
MAX_SWEEPS = 10_000
PIVOT_TOL = 1e-10
CV_PATIENCE = 5


class FitWarning(UserWarning):
    """A fit completed but hit a degenerate or fallback case."""


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design is rank deficient; collinear columns: {self.columns}")


@dataclass
class LassoFit:
    coefficients: np.ndarray
    intercept: float
    lambda_: float
    df: int
    cv_curve: list = field(default_factory=list)
    converged: bool = True
    selection_rule: str = "min"

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(X) @ self.coefficients


@dataclass
class OlsFit:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    ci_level: float
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    residual_variance: float
    intercept: float = 0.0
    intercept_se: float = 0.0
    df_resid: int = 0


@dataclass
class _Standardized:
    Xt: np.ndarray  # p x n, C order
    yc: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    excluded: np.ndarray


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X of shape {X.shape} does not conform with y of length {y.shape[0]}")
    if X.shape[0] < 2:
        raise ValueError("need at least two observations")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be finite")
    return X, y


def _standardize(X: np.ndarray, y: np.ndarray, warn: bool = True) -> _Standardized:
    mean = X.mean(axis=0)
    Xt = np.ascontiguousarray((X - mean).T)
    scale = np.sqrt(np.einsum("ij,ij->i", Xt, Xt) / X.shape[0])
    excluded = scale <= 1e-12 * np.maximum(1.0, np.abs(mean))
    if excluded.any():
        if warn:
            warnings.warn(
                f"zero-variance columns fixed at 0: {np.flatnonzero(excluded).tolist()}", FitWarning, stacklevel=3
            )
        scale = np.where(excluded, 1.0, scale)
        Xt[excluded] = 0.0
    Xt /= scale[:, None]
    ym = float(y.mean())
    return _Standardized(Xt, y - ym, mean, scale, ym, excluded)


def lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty at which every standardized coefficient is zero."""
    X, y = _check_xy(X, y)
    s = _standardize(X, y, warn=False)
    return _lambda_max(s)


def _lambda_max(s: _Standardized) -> float:
    return float(np.max(np.abs(s.Xt @ s.yc)) / s.yc.shape[0])


def _run_path(
    s: _Standardized,
    lambdas: np.ndarray,
    dev_stop: bool,
    tol: float = CD_TOL,
    trace=None,
    beta_init: Optional[np.ndarray] = None,
    lam_prev: float = 0.0,
    beta_before: Optional[np.ndarray] = None,
    lam_before: float = 0.0,
):
    p = s.Xt.shape[0]
    coefs = np.zeros((lambdas.shape[0], p))
    trace = np.empty(0) if trace is None else trace
    beta_init = np.zeros(p) if beta_init is None else beta_init
    if beta_before is None:
        beta_before, lam_before = np.zeros(p), 0.0
    n_fit, _, converged = cd_path(
        s.Xt,
        s.yc,
        np.ascontiguousarray(lambdas, dtype=float),
        s.excluded,
        tol,
        MAX_SWEEPS,
        dev_stop,
        coefs,
        trace,
        beta_init,
        float(lam_prev),
        beta_before,
        float(lam_before),
    )
    if not converged:
        warnings.warn("coordinate descent hit the sweep cap before converging", FitWarning, stacklevel=3)
    return coefs[:n_fit], bool(converged)


def _fit_at(s: _Standardized, path: np.ndarray, tol: float = CD_TOL):
    """Walk ``path`` loosely with warm starts, then solve its last penalty to ``tol``."""
    beta, lam_prev, before, lam_before = None, 0.0, None, 0.0
    if path.shape[0] > 1:
        walk, _ = _run_path(s, path[:-1], False, PATH_TOL)
        beta, lam_prev = walk[-1].copy(), float(path[-2])
        if path.shape[0] > 2:
            before, lam_before = walk[-2].copy(), float(path[-3])
    last, converged = _run_path(
        s, path[-1:], False, tol, beta_init=beta, lam_prev=lam_prev,
        beta_before=before, lam_before=lam_before,
    )
    return last[0], converged


def _to_original(s: _Standardized, coef_std: np.ndarray):
    coef = coef_std / s.x_scale
    return coef, s.y_mean - float(s.x_mean @ coef)


def lasso_path(X, y, lambdas, dev_stop: bool = False):
    """Original-scale coefficients (one row per lambda) and intercepts along ``lambdas``."""
    X, y = _check_xy(X, y)
    s = _standardize(X, y)
    coefs, _ = _run_path(s, np.asarray(lambdas, dtype=float), dev_stop)
    B = coefs / s.x_scale
    return B, s.y_mean - B @ s.x_mean


def lasso_fit(X, y, lam: float, tol: float = CD_TOL, trace: Optional[np.ndarray] = None) -> LassoFit:
    """Minimize ``(1/2n)||y - b0 - X b||^2 + lam * ||b||_1`` on standardized columns.

    The penalty applies to standardized coefficients; the returned
    coefficients and intercept are on the original scale.
    """
    X, y = _check_xy(X, y)
    if not lam > 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    s = _standardize(X, y)
    coefs, converged = _run_path(s, np.array([lam]), dev_stop=False, tol=tol, trace=trace)
    coef, b0 = _to_original(s, coefs[0])
    return LassoFit(coef, b0, float(lam), int(np.count_nonzero(coef)), converged=converged)


def lambda_grid(lam_max: float, n_lambda: int = N_LAMBDA, min_ratio: float = LAMBDA_MIN_RATIO) -> np.ndarray:
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambda)


def fold_assignment(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Random permutation of rows cut into ``k`` contiguous chunks."""
    perm = stream_rng(seed, FOLDS).permutation(n)
    return np.array_split(perm, k)


class _FoldPath:
    """Warm-startable LASSO path on the training rows of one fold."""

    def __init__(self, X, y, test):
        train = np.ones(X.shape[0], dtype=bool)
        train[test] = False
        self.Xtest = X[test]
        self.ytest = y[test]
        self.s = _standardize(X[train], y[train], warn=False)
        self.beta = None
        self.lam = 0.0
        self.before = None
        self.lam_before = 0.0
        self.done = False
        self.errors: list[np.ndarray] = []

    def advance(self, lambdas):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", FitWarning)
            cf, _ = _run_path(
                self.s, lambdas, True, PATH_TOL, beta_init=self.beta, lam_prev=self.lam,
                beta_before=self.before, lam_before=self.lam_before,
            )
        if cf.shape[0] < lambdas.shape[0]:
            self.done = True
        if cf.shape[0] == 0:
            return
        m = cf.shape[0]
        if m > 1:
            self.before, self.lam_before = cf[-2].copy(), float(lambdas[m - 2])
        elif self.beta is not None:
            self.before, self.lam_before = self.beta, self.lam
        self.beta = cf[-1].copy()
        self.lam = float(lambdas[m - 1])
        B = cf / self.s.x_scale
        pred = (self.s.y_mean - B @ self.s.x_mean)[None, :] + self.Xtest @ B.T
        self.errors.append(np.mean((self.ytest[:, None] - pred) ** 2, axis=0))

    @property
    def n_done(self) -> int:
        return sum(e.shape[0] for e in self.errors)


def lasso_cv(
    X,
    y,
    k: int = 10,
    lambda_grid_size: int = N_LAMBDA,
    seed: int = 0,
    min_ratio: float = LAMBDA_MIN_RATIO,
    patience: int = CV_PATIENCE,
) -> LassoFit:
    """LASSO with the penalty picked by ``k``-fold cross-validation.

    The grid runs from ``lambda_max`` down to ``min_ratio * lambda_max``.
    Fold paths are fitted with warm starts in chunks of ``patience``
    lambdas and stop early when the training deviance ratio saturates or
    once the mean CV error has stayed above ``min + 1 se`` for ``patience``
    consecutive lambdas (``patience=0`` disables that rule). The penalty
    minimizing mean out-of-fold squared error is then fitted on all rows by
    following the same grid down to it.
    """
    X, y = _check_xy(X, y)
    n = X.shape[0]
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    if n < k:
        raise ConfigError(f"n={n} is smaller than the fold count k={k}")
    s = _standardize(X, y)
    lmax = _lambda_max(s)
    if lmax <= 0.0:
        return LassoFit(np.zeros(X.shape[1]), s.y_mean, 0.0, 0, [])
    grid = lambda_grid(lmax, lambda_grid_size, min_ratio)

    folds = [_FoldPath(X, y, test) for test in fold_assignment(n, k, seed)]
    chunk = patience if patience > 0 else grid.shape[0]
    done = 0
    while done < grid.shape[0]:
        for f in folds:
            f.advance(grid[done:done + chunk])
        done = min(f.n_done for f in folds)
        err = np.array([np.concatenate(f.errors)[:done] for f in folds])
        if any(f.done for f in folds) or done == 0:
            break
        cv_mean = err.mean(axis=0)
        cv_se = err.std(axis=0, ddof=1) / np.sqrt(k)
        best = int(np.argmin(cv_mean))
        if patience > 0 and done - 1 - best >= patience:
            if np.all(cv_mean[best + 1:][-patience:] > cv_mean[best] + cv_se[best]):
                break
    cv_mean = err.mean(axis=0)
    cv_se = err.std(axis=0, ddof=1) / np.sqrt(k)
    best = int(np.argmin(cv_mean))
    coef_std, converged = _fit_at(s, grid[: best + 1])
    coef, b0 = _to_original(s, coef_std)
    curve = [(float(grid[i]), float(cv_mean[i]), float(cv_se[i])) for i in range(done)]
    return LassoFit(coef, b0, float(grid[best]), int(np.count_nonzero(coef)), curve, converged)


def kkt_check(X, y, fit: LassoFit, tol: float = 1e-6) -> tuple[bool, float]:
    """Stationarity check of a LASSO fit on the standardized problem.

    For ``b_j == 0`` require ``|g_j| <= lam + tol``; otherwise
    ``|g_j - sign(b_j) lam| <= tol`` where ``g = X_s^T (y_c - X_s b) / n``.
    Returns ``(passed, max_violation)``.
    """
    X, y = _check_xy(X, y)
    s = _standardize(X, y, warn=False)
    b = np.asarray(fit.coefficients, dtype=float) * s.x_scale
    if np.any(b[s.excluded] != 0):
        return False, float("inf")
    r = s.yc - s.Xt.T @ b
    g = s.Xt @ r / X.shape[0]
    lam = fit.lambda_
    zero = b == 0
    viol = np.where(zero, np.maximum(np.abs(g) - lam, 0.0), np.abs(g - np.sign(b) * lam))
    viol[s.excluded] = 0.0
    worst = float(viol.max()) if viol.size else 0.0
    return worst <= tol, worst


def ols_fit(X_sub, y, ci_level: float = 0.95) -> OlsFit:
    """Least squares with intercept, classical standard errors and t intervals."""
    y = np.asarray(y, dtype=float).ravel()
    X_sub = np.asarray(X_sub, dtype=float).reshape(y.shape[0], -1)
    n, m = X_sub.shape
    if not 0 < ci_level < 1:
        raise ConfigError(f"ci_level must lie in (0, 1), got {ci_level}")
    if n <= m + 1:
        raise ConfigError(f"need more rows ({n}) than columns plus intercept ({m + 1})")
    A = np.column_stack([np.ones(n), X_sub])
    Q, R, piv = linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > PIVOT_TOL * diag[0]))
    if rank < m + 1:
        bad = sorted(int(c) - 1 for c in piv[rank:])
        raise RankDeficientError(["intercept" if c < 0 else c for c in bad])
    z = linalg.solve_triangular(R, Q.T @ y)
    theta = np.empty(m + 1)
    theta[piv] = z
    resid = y - A @ theta
    df = n - m - 1
    s2 = float(resid @ resid) / df
    Rinv = linalg.solve_triangular(R, np.eye(m + 1))
    var_diag = np.empty(m + 1)
    var_diag[piv] = np.einsum("ij,ij->i", Rinv, Rinv)
    se = np.sqrt(s2 * var_diag)
    half = stats.t.ppf(0.5 + ci_level / 2, df) * se
    return OlsFit(
        coefficients=theta[1:],
        standard_errors=se[1:],
        ci_level=ci_level,
        ci_lower=theta[1:] - half[1:],
        ci_upper=theta[1:] + half[1:],
        residual_variance=s2,
        intercept=float(theta[0]),
        intercept_se=float(se[0]),
        df_resid=df,
    )


def sigma2_from_rss(rss: float, n: int, df: int) -> float:
    """``rss / (n - df - 1)``, or ``rss / n`` with a warning when that denominator is not positive."""
    denom = n - df - 1
    if denom <= 0:
        warnings.warn(
            f"df={df} leaves no residual degrees of freedom (n={n}); using RSS/n, which may underestimate sigma^2",
            FitWarning,
            stacklevel=2,
        )
        return rss / n
    return rss / denom


def estimate_sigma2(X, y, k: int = 10, seed: int = 0) -> float:
    """Residual variance from the in-sample residuals of the CV-tuned LASSO."""
    X, y = _check_xy(X, y)
    fit = lasso_cv(X, y, k=k, seed=seed)
    resid = y - fit.predict(X)
    return sigma2_from_rss(float(resid @ resid), X.shape[0], fit.df)
