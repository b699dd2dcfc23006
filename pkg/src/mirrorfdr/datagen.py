"""Synthetic Gaussian regression problems.

Covariates are multivariate Normal with one of three correlation structures,
coefficients are sparse (Normal-scaled or drawn from a fixed pool) and the
outcome is ``X @ beta`` plus homoscedastic Gaussian noise.

All randomness flows from a single integer seed which is split into
independent streams (see :func:`stream_rng`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

DEFAULT_BLOCK_SIZE = 100
PAPER_POOL = (-1.0, -0.8, -0.5, 0.5, 0.8, 1.0)

# stream ids for SeedSequence spawn keys
COVARIATES, BETAS, NOISE, RANDOMISATION, SPLITS, FOLDS = range(6)


class ConfigError(ValueError):
    """Invalid configuration of a generator, fitter or scenario."""


class CovarianceError(np.linalg.LinAlgError):
    """Covariance matrix is not positive definite."""


def stream_rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    """Independent generator for ``stream`` derived from ``seed``.

    Streams are keyed through ``SeedSequence.spawn_key`` so two different
    ``(stream, *extra)`` tuples never share state.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), *map(int, extra)))
    return np.random.default_rng(ss)


def derive_seed(*parts: int) -> int:
    """Deterministic 63-bit seed from a tuple of integers."""
    state = np.random.SeedSequence([int(x) for x in parts]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


class CovFamily(str, Enum):
    TOEPLITZ_BLOCK = "toeplitz_block"
    ILL_CONDITIONED_TRIDIAGONAL = "ill_conditioned_tridiagonal"
    IDENTITY = "identity"


class BetaScheme(str, Enum):
    NORMAL_SCALED = "normal_scaled"
    FIXED_POOL = "fixed_pool"


@dataclass(frozen=True)
class CovarianceSpec:
    family: CovFamily = CovFamily.TOEPLITZ_BLOCK
    rho: float = 0.0
    block_size: int = DEFAULT_BLOCK_SIZE

    def __post_init__(self):
        object.__setattr__(self, "family", CovFamily(self.family))
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if self.block_size < 1:
            raise ConfigError(f"block_size must be positive, got {self.block_size}")


@dataclass(frozen=True)
class BetaSpec:
    scheme: BetaScheme = BetaScheme.NORMAL_SCALED
    p1: int = 0
    delta: float = 5.0
    pool: tuple = PAPER_POOL
    placement_seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", BetaScheme(self.scheme))
        object.__setattr__(self, "pool", tuple(float(v) for v in self.pool))
        if self.p1 < 0:
            raise ConfigError(f"p1 must be non-negative, got {self.p1}")
        if self.scheme is BetaScheme.NORMAL_SCALED and not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.scheme is BetaScheme.FIXED_POOL:
            if len(self.pool) == 0:
                raise ConfigError("FixedPool scheme needs a non-empty pool")
            if any(v == 0.0 for v in self.pool):
                raise ConfigError("pool values must be nonzero")


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    beta_true: Optional[np.ndarray] = None
    sigma2_true: Optional[float] = None
    support_true: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n, p = self.X.shape
        if n < 2 or p < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got X of shape {self.X.shape}")
        if self.y.shape[0] != n:
            raise ValueError(f"y has length {self.y.shape[0]}, X has {n} rows")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("X and y must be finite")
        if self.beta_true is not None:
            self.beta_true = np.asarray(self.beta_true, dtype=float)
            if self.beta_true.shape != (p,):
                raise ValueError("beta_true must have length p")
            support = np.flatnonzero(self.beta_true)
            if self.support_true is None:
                self.support_true = support
            elif not np.array_equal(np.sort(self.support_true), support):
                raise ValueError("support_true disagrees with the nonzeros of beta_true")
        if self.support_true is not None:
            self.support_true = np.sort(np.asarray(self.support_true, dtype=np.intp))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _toeplitz_block(size: int, rho: float) -> np.ndarray:
    if size == 1:
        return np.ones((1, 1))
    k = np.arange(size, dtype=float)
    first = (size - 1 - k) * rho / (size - 1)
    first[0] = 1.0
    return linalg.toeplitz(first)


def _block_sizes(p: int, block_size: int) -> list[int]:
    full, rem = divmod(p, block_size)
    return [block_size] * full + ([rem] if rem else [])


def _tridiagonal_min_eig(p: int, rho: float) -> float:
    if p == 1:
        return 1.0
    return 1.0 - 2.0 * rho * math.cos(math.pi / (p + 1))


def build_covariance(spec: CovarianceSpec, p: int) -> np.ndarray:
    """Dense ``p x p`` correlation matrix for ``spec``.

    ToeplitzBlock matrices are block diagonal; within a block of size ``b``
    the entry at offset ``k`` is ``(b - 1 - k) * rho / (b - 1)``. When ``p``
    is not a multiple of the block size the last block is the remainder.
    """
    if p < 1:
        raise ConfigError(f"p must be positive, got {p}")
    if spec.family is CovFamily.IDENTITY:
        return np.eye(p)
    if spec.family is CovFamily.TOEPLITZ_BLOCK:
        return linalg.block_diag(*[_toeplitz_block(b, spec.rho) for b in _block_sizes(p, spec.block_size)])
    lam_min = _tridiagonal_min_eig(p, spec.rho)
    if lam_min <= 0:
        raise CovarianceError(
            f"tridiagonal covariance with rho={spec.rho}, p={p} is not positive definite: "
            f"smallest eigenvalue is {'zero' if lam_min == 0 else 'negative'} ({lam_min:.3e})"
        )
    cov = np.eye(p)
    idx = np.arange(p - 1)
    cov[idx, idx + 1] = spec.rho
    cov[idx + 1, idx] = spec.rho
    return cov


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        lam_min = float(np.linalg.eigvalsh(cov)[0])
        sign = "negative" if lam_min < 0 else ("zero" if lam_min == 0 else "positive but numerically singular")
        raise CovarianceError(f"Cholesky factorization failed; smallest eigenvalue is {sign} ({lam_min:.3e})") from None


def sample_covariates(cov: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` rows from ``N_p(0, cov)`` as ``Z @ L.T`` with ``cov = L L^T``."""
    cov = np.asarray(cov, dtype=float)
    L = _cholesky(cov)
    Z = stream_rng(seed, COVARIATES).standard_normal((n, cov.shape[0]))
    return Z @ L.T


def sample_structured(spec: CovarianceSpec, p: int, n: int, seed: int) -> np.ndarray:
    """Same draw as ``sample_covariates(build_covariance(spec, p), n, seed)``.

    Exploits block or band structure so that ``p = 10000`` never needs a
    dense ``p x p`` factor. Agrees with the dense route up to rounding.
    """
    Z = stream_rng(seed, COVARIATES).standard_normal((n, p))
    if spec.family is CovFamily.IDENTITY:
        return Z
    if spec.family is CovFamily.TOEPLITZ_BLOCK:
        X = np.empty_like(Z)
        start = 0
        factors: dict[int, np.ndarray] = {}
        for b in _block_sizes(p, spec.block_size):
            if b not in factors:
                factors[b] = _cholesky(_toeplitz_block(b, spec.rho))
            X[:, start:start + b] = Z[:, start:start + b] @ factors[b].T
            start += b
        return X
    build_covariance(spec, p)  # raises on a non positive definite spec
    if p == 1:
        return Z
    banded = np.zeros((2, p))
    banded[0] = 1.0
    banded[1, :-1] = spec.rho
    try:
        cb = linalg.cholesky_banded(banded, lower=True)
    except np.linalg.LinAlgError:
        raise CovarianceError(
            f"banded Cholesky failed; smallest eigenvalue is {_tridiagonal_min_eig(p, spec.rho):.3e}"
        ) from None
    # L[j, j] = cb[0, j], L[j + 1, j] = cb[1, j]
    X = Z * cb[0]
    X[:, 1:] += Z[:, :-1] * cb[1, :-1]
    return X


def normal_beta_scale(delta: float, p: int, n: int) -> float:
    """Standard deviation ``delta * sqrt(log(p) / n)`` of Normal-drawn coefficients."""
    return delta * math.sqrt(math.log(p) / n)


def generate_betas(spec: BetaSpec, p: int, n: int, seed: int) -> np.ndarray:
    if spec.p1 > p:
        raise ConfigError(f"p1={spec.p1} exceeds p={p}")
    beta = np.zeros(p)
    if spec.p1 == 0:
        return beta
    place_seed = seed if spec.placement_seed is None else spec.placement_seed
    active = stream_rng(place_seed, BETAS, 0).choice(p, size=spec.p1, replace=False)
    rng = stream_rng(seed, BETAS, 1)
    if spec.scheme is BetaScheme.NORMAL_SCALED:
        vals = rng.normal(0.0, normal_beta_scale(spec.delta, p, n), size=spec.p1)
        # an exact zero draw would break the support contract
        vals[vals == 0.0] = np.finfo(float).tiny
    else:
        vals = rng.choice(np.asarray(spec.pool), size=spec.p1, replace=True)
    beta[np.sort(active)] = vals
    return beta


def generate_outcome(X: np.ndarray, beta: np.ndarray, sigma2: float, seed: int) -> np.ndarray:
    if not sigma2 > 0:
        raise ConfigError(f"sigma2 must be positive, got {sigma2}")
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if X.shape[1] != beta.shape[0]:
        raise ValueError(f"X has {X.shape[1]} columns but beta has length {beta.shape[0]}")
    noise = stream_rng(seed, NOISE).normal(0.0, math.sqrt(sigma2), size=X.shape[0])
    return X @ beta + noise


def make_dataset(
    n: int,
    p: int,
    cov: CovarianceSpec,
    betas: BetaSpec,
    sigma2: float,
    seed: int,
) -> Dataset:
    """One simulated regression problem, fully determined by ``seed``."""
    X = sample_structured(cov, p, n, seed)
    beta = generate_betas(betas, p, n, seed)
    y = generate_outcome(X, beta, sigma2, seed)
    return Dataset(X=X, y=y, beta_true=beta, sigma2_true=float(sigma2))


def resolve_p1(active: float | int, p: int) -> int:
    """Active count from either an integer count or a fraction of ``p``."""
    if isinstance(active, (int, np.integer)) and not isinstance(active, bool):
        count = int(active)
    else:
        frac = float(active)
        if not 0.0 <= frac <= 1.0:
            raise ConfigError(f"active fraction must lie in [0, 1], got {frac}")
        count = int(round(frac * p))
    if not 0 <= count <= p:
        raise ConfigError(f"active count {count} outside [0, {p}]")
    return count


def as_index_set(values: Sequence[int] | np.ndarray, p: int) -> np.ndarray:
    idx = np.unique(np.asarray(values, dtype=np.intp))
    if idx.size and (idx[0] < 0 or idx[-1] >= p):
        raise ValueError(f"index out of range [0, {p})")
    return idx
