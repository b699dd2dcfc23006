"""Mirror-statistic FDR control.

Three selection procedures share the same two-stage core: a CV-tuned LASSO
screens features on one view of the data, OLS on the screened features
re-estimates them on an independent view, and the two coefficient vectors
are combined into mirror statistics ``sign(b1 * b2) * (|b1| + |b2|)``.

* ``randms_select``: the two views are ``u = y + w`` and ``v = y - w / gamma``
  with ``w ~ N(0, sigma^2 gamma I)``, using every row for both stages.
* ``ds_select``: the two views are disjoint halves of the rows.
* ``mds_select``: many ``ds_select`` runs aggregated through inclusion rates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .datagen import RANDOMISATION, SPLITS, ConfigError, Dataset, derive_seed, stream_rng
from .fitters import FitWarning, LassoFit, OlsFit, estimate_sigma2, lasso_cv, ols_fit

DEFAULT_GAMMA = 1.0
DEFAULT_MDS_SPLITS = 50


@dataclass
class RandomisedOutcomes:
    u: np.ndarray
    v: np.ndarray
    gamma: float
    sigma2_used: float
    w_seed: int

    def reconstruct(self) -> np.ndarray:
        return (self.u + self.gamma * self.v) / (1.0 + self.gamma)


@dataclass
class MirrorResult:
    m: np.ndarray
    tau: Optional[float]
    selected: np.ndarray
    q_target: float
    fdp_at_tau: float
    screened: np.ndarray
    # per-feature stage estimates, NaN off the screened set
    beta_screen: Optional[np.ndarray] = None
    beta_infer: Optional[np.ndarray] = None
    ci_lower: Optional[np.ndarray] = None
    ci_upper: Optional[np.ndarray] = None
    sigma2_used: Optional[float] = None
    lasso: Optional[LassoFit] = None
    ols: Optional[OlsFit] = None
    notes: list = field(default_factory=list)


@dataclass
class MdsResult:
    inclusion_rates: np.ndarray
    selected: np.ndarray
    splits: int
    per_split_selections: list
    q_target: float


def _check_q(q: float) -> None:
    if not 0.0 < q < 1.0:
        raise ConfigError(f"q must lie in (0, 1), got {q}")


def randomise(y, sigma2: float, gamma: float = DEFAULT_GAMMA, seed: int = 0) -> RandomisedOutcomes:
    """Split ``y`` into two independent Gaussian views.

    Draws ``w ~ N_n(0, sigma2 * gamma * I)`` and returns ``u = y + w`` and
    ``v = y - w / gamma``; ``(u + gamma v) / (1 + gamma)`` recovers ``y``.
    """
    y = np.asarray(y, dtype=float).ravel()
    if not np.isfinite(y).all():
        raise ValueError("y must be finite")
    if not sigma2 > 0:
        raise ConfigError(f"sigma2 must be positive, got {sigma2}")
    if not gamma > 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    w = stream_rng(seed, RANDOMISATION).normal(0.0, math.sqrt(sigma2 * gamma), size=y.shape[0])
    u, v = outcome_views(y, w, gamma)
    return RandomisedOutcomes(u, v, float(gamma), float(sigma2), int(seed))


def outcome_views(y, w, gamma: float = DEFAULT_GAMMA) -> tuple[np.ndarray, np.ndarray]:
    """``(y + w, y - w / gamma)`` for a given perturbation ``w``."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    return y + w, y - w / gamma


def mirror_statistic(b1, b2):
    """``sign(b1 * b2) * (|b1| + |b2|)`` with ``sign(0) = 0``; vectorized."""
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    out = np.sign(b1) * np.sign(b2) * (np.abs(b1) + np.abs(b2))
    return float(out) if out.ndim == 0 else out


def fdp_estimate(m: np.ndarray, t: float) -> float:
    """``#{m < -t} / max(#{m > t}, 1)``."""
    m = np.asarray(m, dtype=float)
    return np.count_nonzero(m < -t) / max(np.count_nonzero(m > t), 1)


def fdp_threshold(m, q: float) -> tuple[Optional[float], float]:
    """Smallest threshold whose estimated FDP is at most ``q``.

    ``tau = inf{t > 0 : FDP(t) <= q}``. FDP is piecewise constant and
    right-continuous with jumps at the distinct ``|m_j|``, so the infimum is
    either one of those values or 0 when FDP already qualifies on
    ``(0, min |m_j|)``; in the latter case every positive ``m_j`` is selected.
    Returns ``(None, 0.0)`` when no threshold leaves a nonempty selection
    ``{m > tau}``.
    """
    _check_q(q)
    m = np.asarray(m, dtype=float).ravel()
    pos = np.sort(m[m > 0])
    neg = np.sort(-m[m < 0])
    if pos.size == 0:
        return None, 0.0
    cand = np.concatenate([[0.0], np.unique(np.concatenate([pos, neg]))])
    n_above = pos.size - np.searchsorted(pos, cand, side="right")
    n_below = neg.size - np.searchsorted(neg, cand, side="right")
    fdp = n_below / np.maximum(n_above, 1)
    ok = np.flatnonzero((fdp <= q) & (n_above > 0))
    if ok.size == 0:
        return None, 0.0
    i = ok[0]
    return float(cand[i]), float(fdp[i])


def _select(m: np.ndarray, tau: Optional[float]) -> np.ndarray:
    if tau is None:
        return np.empty(0, dtype=np.intp)
    return np.flatnonzero(m > tau)


def _two_stage(X1, y1, X2, y2, q: float, cv_seed: int, k: int = 10) -> MirrorResult:
    p = X1.shape[1]
    notes = []
    fit = lasso_cv(X1, y1, k=k, seed=cv_seed)
    screened = fit.support
    cap = X2.shape[0] - 2
    if screened.size > cap:
        keep = np.argsort(-np.abs(fit.coefficients[screened]), kind="stable")[:cap]
        msg = f"{screened.size} screened features exceed the OLS capacity {cap}; kept the {cap} largest"
        warnings.warn(msg, FitWarning, stacklevel=3)
        notes.append(msg)
        screened = np.sort(screened[keep])
    m = np.zeros(p)
    beta_screen = np.full(p, np.nan)
    beta_infer = np.full(p, np.nan)
    lo = np.full(p, np.nan)
    hi = np.full(p, np.nan)
    ols = None
    beta_screen[screened] = fit.coefficients[screened]
    if screened.size:
        ols = ols_fit(X2[:, screened], y2)
        beta_infer[screened] = ols.coefficients
        lo[screened] = ols.ci_lower
        hi[screened] = ols.ci_upper
        m[screened] = mirror_statistic(fit.coefficients[screened], ols.coefficients)
    tau, fdp = fdp_threshold(m[screened], q) if screened.size else (None, 0.0)
    return MirrorResult(
        m=m,
        tau=tau,
        selected=_select(m, tau),
        q_target=q,
        fdp_at_tau=fdp,
        screened=screened,
        beta_screen=beta_screen,
        beta_infer=beta_infer,
        ci_lower=lo,
        ci_upper=hi,
        lasso=fit,
        ols=ols,
        notes=notes,
    )


def randms_select(
    dataset: Dataset,
    q: float = 0.1,
    gamma: float = DEFAULT_GAMMA,
    sigma2: Optional[float] = None,
    seed: int = 0,
    k: int = 10,
) -> MirrorResult:
    """Outcome randomisation plus mirror statistic.

    When ``sigma2`` is None it is estimated from the CV-tuned LASSO on the
    unperturbed outcome before randomising.
    """
    _check_q(q)
    if not gamma > 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    X, y = dataset.X, dataset.y
    if sigma2 is None:
        sigma2 = estimate_sigma2(X, y, k=k, seed=derive_seed(seed, 1))
        if not sigma2 > 0:
            raise ValueError("estimated residual variance is zero; the outcome is fitted exactly")
    ro = randomise(y, sigma2, gamma, seed)
    res = _two_stage(X, ro.u, X, ro.v, q, derive_seed(seed, 2), k)
    res.sigma2_used = float(sigma2)
    return res


def split_rows(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = stream_rng(seed, SPLITS).permutation(n)
    h = n // 2
    return np.sort(perm[:h]), np.sort(perm[h:])


def ds_select(dataset: Dataset, q: float = 0.1, seed: int = 0, k: int = 10) -> MirrorResult:
    """Single data split: LASSO on one half, OLS on the other."""
    _check_q(q)
    X, y = dataset.X, dataset.y
    if X.shape[0] < 4:
        raise ConfigError("data splitting needs at least 4 rows")
    a, b = split_rows(X.shape[0], seed)
    return _two_stage(X[a], y[a], X[b], y[b], q, derive_seed(seed, 2), k)


def mds_aggregate(per_split: Sequence[np.ndarray], p: int, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Inclusion rates and final selection of multiple data splitting.

    Each split contributes ``1 / max(|S|, 1)`` to every feature it selects;
    rates are the mean over splits. Features are sorted by rate (ties by
    index), the longest prefix with cumulative rate at most ``q`` is dropped
    and the remaining features with positive rate are selected.
    """
    rates = np.zeros(p)
    for sel in per_split:
        sel = np.asarray(sel, dtype=np.intp)
        if sel.size:
            rates[sel] += 1.0 / sel.size
    rates /= max(len(per_split), 1)
    order = np.argsort(rates, kind="stable")
    csum = np.cumsum(rates[order])
    n_drop = int(np.searchsorted(csum, q, side="right"))
    keep = order[n_drop:]
    keep = keep[rates[keep] > 0]
    return rates, np.sort(keep)


def mds_select(
    dataset: Dataset, q: float = 0.1, splits: int = DEFAULT_MDS_SPLITS, seed: int = 0, k: int = 10
) -> MdsResult:
    _check_q(q)
    if splits < 2:
        raise ConfigError(f"MDS needs at least 2 splits, got {splits}")
    per_split = [ds_select(dataset, q, derive_seed(seed, SPLITS, i), k).selected for i in range(splits)]
    rates, selected = mds_aggregate(per_split, dataset.p, q)
    return MdsResult(rates, selected, splits, per_split, q)


def null_symmetry_diagnostic(m, null_set, tau: Optional[float]) -> tuple[int, int]:
    """Counts of null mirror statistics above ``tau`` and below ``-tau``.

    An absent threshold counts as ``+inf``.
    """
    m = np.asarray(m, dtype=float)
    t = np.inf if tau is None else float(tau)
    mn = m[np.asarray(null_set, dtype=np.intp)]
    return int(np.count_nonzero(mn > t)), int(np.count_nonzero(mn < -t))
