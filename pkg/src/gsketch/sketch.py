"""Generalized randomized SVD for matrices.

The range of ``A`` is sketched with Gaussian test vectors drawn from
``N(0, K)`` for a user-chosen covariance ``K``. Besides the sketch itself
this module evaluates the covariance quality factors ``gamma_k`` and
``beta_k``, the resulting probabilistic error bounds, and Monte-Carlo
checks of the moment and tail estimates those bounds rest on.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator

from ._validation import check_int, check_matrix, check_real, check_square_symmetric, check_vector
from .covariance import CovarianceSpec, discretize_covariance
from .exceptions import ConfigError, NumericalError
from .sampling import FactoredCovariance, RandomSource, as_random_source, draw_mvn_matrix, factor_covariance

logger = logging.getLogger(__name__)

RANK_TOL = 1e-12
GAMMA_SINGULAR_TOL = 1e-14
MC_BLOCK = 1000


class BoundMode(str, Enum):
    GENERALIZED = "generalized"
    STANDARD_HMT = "standard_hmt"


@dataclass(frozen=True)
class SketchConfig:
    """Target rank ``k``, oversampling ``p`` and bound parameters ``t, u >= 1``."""

    k: int
    p: int = 5
    t: float = 1.0
    u: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "k", check_int(self.k, "k", minimum=1))
        object.__setattr__(self, "p", check_int(self.p, "p", minimum=0))
        object.__setattr__(self, "t", check_real(self.t, "t", minimum=1.0))
        object.__setattr__(self, "u", check_real(self.u, "u", minimum=1.0))

    @property
    def ell(self):
        return self.k + self.p


@dataclass(frozen=True)
class QualityFactors:
    """Covariance quality factors for a target rank.

    ``exact_low_rank`` is set when the trailing singular values vanish, in
    which case ``beta_k`` is defined as 0.
    """

    gamma_k: float
    beta_k: float
    lambda1: float
    exact_low_rank: bool = False

    @property
    def ratio(self):
        return self.beta_k / self.gamma_k


@dataclass(frozen=True, eq=False)
class LowRankFactors:
    """Orthonormal range basis ``Q`` and coefficients ``B = Q.T @ A``."""

    Q: np.ndarray
    B: np.ndarray

    @property
    def rank(self):
        return self.Q.shape[1]

    @property
    def approximation(self):
        return self.Q @ self.B


@dataclass(frozen=True, eq=False)
class SketchResult:
    k: int
    p: int
    omega: np.ndarray = field(repr=False)
    factors: LowRankFactors = field(repr=False)
    error_fro: float | None = None
    error_rel: float | None = None
    tail: float | None = None
    quality: QualityFactors | None = None
    bound_rhs: float | None = None
    seed: int | None = None

    def to_dict(self):
        q = self.quality
        return {
            "k": self.k,
            "p": self.p,
            "error_fro": self.error_fro,
            "error_rel": self.error_rel,
            "tail": self.tail,
            "gamma_k": None if q is None else q.gamma_k,
            "beta_k": None if q is None else q.beta_k,
            "bound_rhs": self.bound_rhs,
            "seed": self.seed,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


# --------------------------------------------------------------------------
# range finding and errors
# --------------------------------------------------------------------------


def _apply(apply_A, X):
    if callable(apply_A) and not isinstance(apply_A, (np.ndarray, LinearOperator)):
        return np.asarray(apply_A(X), dtype=float)
    return np.asarray(apply_A @ X, dtype=float)


def orthonormal_basis(Y, rank_tol=RANK_TOL):
    """Orthonormal basis of ``range(Y)`` from a column-pivoted QR.

    Columns whose pivot falls below ``rank_tol * ||Y||_F`` are dropped. LAPACK's
    pivoting takes the first column of maximal norm, so ties go to the lowest
    index.
    """
    Y = np.asarray(Y, dtype=float)
    norm = np.linalg.norm(Y)
    if Y.shape[1] == 0 or norm == 0.0:
        return np.zeros((Y.shape[0], 0))
    Q, R, _ = scipy.linalg.qr(Y, mode="economic", pivoting=True)
    r = int(np.sum(np.abs(np.diag(R)) > rank_tol * norm))
    return Q[:, :r]


def range_finder(apply_A, omega, rank_tol=RANK_TOL):
    """``Q`` with orthonormal columns spanning ``range(A @ omega)``.

    ``apply_A`` is a matrix, a :class:`~scipy.sparse.linalg.LinearOperator`
    or a callable acting on blocks of columns. A zero sketch yields an empty
    ``(m, 0)`` basis.
    """
    omega = np.asarray(omega, dtype=float)
    if omega.ndim == 1:
        omega = omega[:, None]
    return orthonormal_basis(_apply(apply_A, omega), rank_tol)


def project_error(A, Q, relative=False):
    """Frobenius norm of ``A - Q Q^T A`` (divided by ``||A||_F`` if ``relative``)."""
    A = check_matrix(A)
    Q = np.asarray(Q, dtype=float).reshape(A.shape[0], -1)
    R = A - Q @ (Q.T @ A) if Q.shape[1] else A
    err = float(np.linalg.norm(R))
    if relative:
        normA = float(np.linalg.norm(A))
        return err / normA if normA > 0 else 0.0
    return err


def svd_tail(singular_values, k):
    """Best rank-``k`` Frobenius error ``sqrt(sum_{j>k} sigma_j**2)``."""
    s = check_vector(singular_values, name="singular_values")
    k = check_int(k, "k", minimum=0)
    if k > s.size:
        raise ConfigError(f"k={k} exceeds the number of singular values {s.size}")
    return float(np.sqrt(np.sum(s[k:] ** 2)))


# --------------------------------------------------------------------------
# quality factors
# --------------------------------------------------------------------------


def _lambda1(K, lambda1):
    if lambda1 is not None:
        return float(lambda1)
    return float(np.linalg.eigvalsh(K)[-1])


def gamma_k(K, V1, lambda1=None):
    """Covariance quality factor ``k / (lambda_1 Tr((V1^T K V1)^-1))``.

    The trace of the inverse is taken from the eigenvalues of the ``k x k``
    Gram matrix.
    """
    K = check_square_symmetric(K, rtol=1e-10)
    V1 = check_matrix(V1, "V1")
    k = V1.shape[1]
    lam1 = _lambda1(K, lambda1)
    M = V1.T @ K @ V1
    mu = np.linalg.eigvalsh(0.5 * (M + M.T))
    if lam1 <= 0 or mu[0] <= GAMMA_SINGULAR_TOL * lam1:
        raise NumericalError("covariance blind to leading right singular subspace (V1^T K V1 is singular)")
    return float(k / (lam1 * np.sum(1.0 / mu)))


def beta_k(K, V2, sigma2, lambda1=None):
    """``Tr(Sigma2^2 V2^T K V2) / (lambda_1 ||Sigma2||_F^2)``; 0 when ``Sigma2 == 0``."""
    K = check_square_symmetric(K, rtol=1e-10)
    V2 = check_matrix(V2, "V2", allow_empty=True)
    s2 = np.asarray(sigma2, dtype=float)
    if s2.ndim == 2:
        s2 = np.diag(s2)
    denom_s = float(np.sum(s2**2))
    if denom_s == 0.0:
        return 0.0
    lam1 = _lambda1(K, lambda1)
    diag = np.einsum("ij,ij->j", V2, K @ V2)
    return float(np.sum(s2**2 * diag) / (lam1 * denom_s))


def trace_sigma_k(K, V2, sigma2):
    """``Tr(Sigma2^2 V2^T K V2)``."""
    s2 = np.asarray(sigma2, dtype=float)
    if s2.ndim == 2:
        s2 = np.diag(s2)
    return float(np.sum(s2**2 * np.einsum("ij,ij->j", V2, K @ V2)))


def gamma_k_lower_bound(eigenvalues, k):
    """Lower bound ``k / sum_{j=n-k+1}^n lambda_1/lambda_j`` on ``gamma_k``."""
    lam = np.sort(check_vector(eigenvalues, name="eigenvalues"))[::-1]
    k = check_int(k, "k", minimum=1)
    tail = lam[lam.size - k :]
    if np.any(tail <= 0):
        return 0.0
    return float(k / np.sum(lam[0] / tail))


def beta_k_upper_bound(eigenvalues, singular_values, k):
    """Upper bound ``sum_{j>k} lambda_{j-k} sigma_j^2 / (lambda_1 sum_{j>k} sigma_j^2)`` on ``beta_k``."""
    lam = np.sort(check_vector(eigenvalues, name="eigenvalues"))[::-1]
    s = check_vector(singular_values, name="singular_values")
    k = check_int(k, "k", minimum=0)
    s2 = s[k:] ** 2
    denom = np.sum(s2)
    if denom == 0:
        return 0.0
    return float(np.sum(lam[: s2.size] * s2) / (lam[0] * denom))


def split_singular_space(A, k):
    """``(sigma, V1, V2, sigma2)`` from a dense SVD with ``V`` of full size ``n``.

    Singular values at or below ``max(m, n) * eps * sigma_1`` are rounding
    noise and are returned as exact zeros, so numerically low-rank matrices
    report a vanishing tail.
    """
    A = check_matrix(A)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    if s.size:
        s = np.where(s > max(A.shape) * np.finfo(float).eps * s[0], s, 0.0)
    n = A.shape[1]
    sigma_full = np.zeros(n)
    sigma_full[: s.size] = s
    V = Vt.T
    return sigma_full, V[:, :k], V[:, k:], sigma_full[k:]


def quality_factors(A, K, k):
    """:class:`QualityFactors` of covariance ``K`` for matrix ``A`` at target rank ``k``."""
    K = check_square_symmetric(K, rtol=1e-10)
    A = check_matrix(A)
    k = check_int(k, "k", minimum=1)
    if K.shape[0] != A.shape[1]:
        raise ConfigError("covariance size must match the column count of A")
    if k > A.shape[1]:
        raise ConfigError("target rank exceeds the column count of A")
    sigma, V1, V2, sigma2 = split_singular_space(A, k)
    lam1 = float(np.linalg.eigvalsh(K)[-1])
    exact = bool(np.sum(sigma2**2) == 0.0)
    return QualityFactors(
        gamma_k=gamma_k(K, V1, lam1),
        beta_k=beta_k(K, V2, sigma2, lam1),
        lambda1=lam1,
        exact_low_rank=exact,
    )


# --------------------------------------------------------------------------
# bounds
# --------------------------------------------------------------------------


def bound_rhs(cfg, qf=None, tail=1.0, mode=BoundMode.GENERALIZED, sigma_k1=None):
    """Right-hand side of the Frobenius error bound.

    ``generalized``: ``(1 + u t sqrt((k+p) * 3k/(p+1) * beta/gamma)) * tail``.
    ``standard_hmt``: ``(1 + t sqrt(3k/(p+1))) * tail + u t sqrt(k+p)/(p+1) * sigma_{k+1}``
    (standard Gaussian sketch, no quality factors).
    """
    mode = BoundMode(mode)
    if cfg.p < 4:
        raise ConfigError(f"the bounds need oversampling p >= 4, got {cfg.p}")
    tail = check_real(tail, "tail", minimum=0.0)
    k, p, t, u = cfg.k, cfg.p, cfg.t, cfg.u
    if mode is BoundMode.GENERALIZED:
        if qf is None:
            raise ConfigError("generalized bound needs QualityFactors")
        ratio = 0.0 if qf.beta_k == 0.0 else qf.beta_k / qf.gamma_k
        return (1.0 + u * t * math.sqrt((k + p) * 3.0 * k / (p + 1) * ratio)) * tail
    if sigma_k1 is None:
        raise ConfigError("standard bound needs sigma_{k+1}")
    sigma_k1 = check_real(sigma_k1, "sigma_k1", minimum=0.0)
    return (1.0 + t * math.sqrt(3.0 * k / (p + 1))) * tail + u * t * math.sqrt(k + p) / (p + 1) * sigma_k1


def failure_probability(cfg, mode=BoundMode.GENERALIZED):
    """``t^-p + (u exp(-(u^2-1)/2))^(k+p)`` (generalized) or ``2 t^-p + exp(-u^2)`` (standard)."""
    mode = BoundMode(mode)
    k, p, t, u = cfg.k, cfg.p, cfg.t, cfg.u
    if mode is BoundMode.GENERALIZED:
        return t ** (-p) + (u * math.exp(-(u * u - 1.0) / 2.0)) ** (k + p)
    return 2.0 * t ** (-p) + math.exp(-u * u)


def tail_bound(ell, s):
    """Chernoff bound ``(1+s)^(ell/2) exp(-s ell/2)`` on the trailing-sketch energy exceeding its mean by ``1+s``."""
    ell = check_int(ell, "ell", minimum=1)
    s = check_real(s, "s", minimum=0.0)
    return float(math.exp(0.5 * ell * (math.log1p(s) - s)))


# --------------------------------------------------------------------------
# Monte-Carlo verification
# --------------------------------------------------------------------------


class MonteCarloEstimate(NamedTuple):
    empirical: float
    analytic: float
    stderr: float
    trials: int


def _trailing_operator(sigma2, V2, K):
    """``S = Sigma2 V2^T L`` with ``L L^T = K``, so ``Sigma2 V2^T Omega = S G``."""
    s2 = np.asarray(sigma2, dtype=float)
    if s2.ndim == 2:
        s2 = np.diag(s2)
    fac = factor_covariance(K)
    return s2[:, None] * (V2.T @ fac.root)


def _block_sizes(trials):
    full, rest = divmod(trials, MC_BLOCK)
    return [MC_BLOCK] * full + ([rest] if rest else [])


def mc_expectation_identity(sigma2, V2, K, T, trials, rng):
    """Monte-Carlo estimate of ``E ||Sigma2 V2^T Omega T||_F^2`` against ``Tr(Sigma2^2 V2^T K V2) ||T||_F^2``.

    ``Omega`` has ``T.shape[0]`` i.i.d. ``N(0, K)`` columns. Trials are
    processed in fixed blocks, block ``b`` drawing from substream ``b``.
    """
    trials = check_int(trials, "trials", minimum=1)
    K = check_square_symmetric(K, rtol=1e-10)
    V2 = check_matrix(V2, "V2", allow_empty=True)
    T = np.atleast_2d(np.asarray(T, dtype=float))
    analytic = trace_sigma_k(K, V2, sigma2) * float(np.sum(T**2))
    S = _trailing_operator(sigma2, V2, K)
    source = as_random_source(rng)
    ell = T.shape[0]
    values = np.empty(trials)
    start = 0
    for b, size in enumerate(_block_sizes(trials)):
        G = source.substream(b).standard_normal((size, K.shape[0], ell))[:, : S.shape[1], :]
        Z = np.einsum("ir,brl,lk->bik", S, G, T)
        values[start : start + size] = np.sum(Z**2, axis=(1, 2))
        start += size
    stderr = float(values.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("inf")
    return MonteCarloEstimate(float(values.mean()), analytic, stderr, trials)


class TailEstimate(NamedTuple):
    rate: float
    bound: float
    stderr: float
    trials: int


def mc_tail_bound(sigma2, V2, K, ell, s, trials, rng):
    """Empirical frequency of ``||Sigma2 V2^T Omega||_F^2 > ell (1+s) Tr(Sigma2^2 V2^T K V2)``.

    Returned with the analytic bound and the binomial standard error at the
    bound, ``sqrt(bound (1 - bound) / trials)``.
    """
    trials = check_int(trials, "trials", minimum=1)
    ell = check_int(ell, "ell", minimum=1)
    K = check_square_symmetric(K, rtol=1e-10)
    V2 = check_matrix(V2, "V2", allow_empty=True)
    c1 = trace_sigma_k(K, V2, sigma2)
    bound = tail_bound(ell, s)
    threshold = ell * (1.0 + s) * c1
    S = _trailing_operator(sigma2, V2, K)
    source = as_random_source(rng)
    exceed = 0
    for b, size in enumerate(_block_sizes(trials)):
        G = source.substream(b).standard_normal((size, K.shape[0], ell))[:, : S.shape[1], :]
        energy = np.sum(np.einsum("ir,brl->bil", S, G) ** 2, axis=(1, 2))
        exceed += int(np.sum(energy > threshold))
    capped = min(bound, 1.0)
    stderr = math.sqrt(capped * (1.0 - capped) / trials)
    return TailEstimate(exceed / trials, bound, stderr, trials)


# --------------------------------------------------------------------------
# the sketch
# --------------------------------------------------------------------------


def _resolve_covariance(cov, n, grid=None):
    """Return ``(K or None, FactoredCovariance or None)``; ``(None, None)`` means identity."""
    if cov is None or (isinstance(cov, str) and cov == "identity"):
        return None, None
    if isinstance(cov, FactoredCovariance):
        if cov.n != n:
            raise ConfigError(f"covariance has size {cov.n}, A has {n} columns")
        return cov.reconstruct(), cov
    if isinstance(cov, CovarianceSpec):
        K = discretize_covariance(cov, grid, check=False)
    else:
        K = check_square_symmetric(cov, "covariance", rtol=1e-10)
    if K.shape[0] != n:
        raise ConfigError(f"covariance has size {K.shape[0]}, A has {n} columns")
    return K, factor_covariance(K)


def _dense(A, limit):
    if isinstance(A, LinearOperator):
        if A.shape[1] > limit:
            return None
        return np.asarray(A.matmat(np.eye(A.shape[1])), dtype=float)
    return A


def generalized_rsvd(
    A,
    cov=None,
    cfg=None,
    rng=None,
    *,
    grid=None,
    compute_quality=True,
    singular_values=None,
    dense_limit=4000,
):
    """Randomized range finder with ``N(0, K)`` test vectors.

    Parameters
    ----------
    A : array of shape (m, n) or LinearOperator
        ``B = Q^T A`` is formed through ``rmatmat`` for linear operators.
    cov : None, "identity", array, CovarianceSpec or FactoredCovariance
        Covariance of the test vectors. A :class:`CovarianceSpec` is
        discretized on ``grid``.
    cfg : SketchConfig
        ``k + p`` test vectors are drawn.
    rng : RandomSource or int
    compute_quality : bool
        Compute ``gamma_k``, ``beta_k`` and the bound from a dense SVD of
        ``A`` (skipped for operators wider than ``dense_limit``).
    singular_values : array, optional
        Precomputed singular values of ``A`` for the tail, avoiding an SVD
        when ``compute_quality`` is False.
    """
    if cfg is None:
        raise ConfigError("a SketchConfig is required")
    if not isinstance(A, LinearOperator):
        A = check_matrix(A)
    m, n = A.shape
    if cfg.ell > n:
        raise ConfigError(f"k + p = {cfg.ell} exceeds the column count {n}")
    source = as_random_source(rng)
    K, fac = _resolve_covariance(cov, n, grid)
    if fac is None:
        omega = source.standard_normal((n, cfg.ell))
    else:
        omega = draw_mvn_matrix(fac, source, cfg.ell)
    Q = range_finder(A, omega)
    if isinstance(A, LinearOperator):
        B = np.asarray(A.rmatmat(Q), dtype=float).T if Q.shape[1] else np.zeros((0, n))
    else:
        B = Q.T @ A
    factors = LowRankFactors(Q=Q, B=B)

    dense = _dense(A, dense_limit)
    error_fro = error_rel = tail = quality = rhs = None
    if dense is not None:
        normA = float(np.linalg.norm(dense))
        error_fro = float(np.linalg.norm(dense - Q @ B))
        error_rel = error_fro / normA if normA > 0 else 0.0
        if singular_values is not None:
            tail = svd_tail(singular_values, min(cfg.k, len(singular_values)))
        if compute_quality:
            Kq = np.eye(n) if K is None else K
            sigma, V1, V2, sigma2 = split_singular_space(dense, cfg.k)
            tail = float(np.sqrt(np.sum(sigma2**2)))
            lam1 = float(np.linalg.eigvalsh(Kq)[-1])
            try:
                quality = QualityFactors(
                    gamma_k=gamma_k(Kq, V1, lam1),
                    beta_k=beta_k(Kq, V2, sigma2, lam1),
                    lambda1=lam1,
                    exact_low_rank=bool(np.sum(sigma2**2) == 0.0),
                )
            except NumericalError as exc:
                logger.warning("quality factors unavailable: %s", exc)
            if quality is not None and cfg.p >= 4:
                rhs = bound_rhs(cfg, quality, tail)
    return SketchResult(
        k=cfg.k,
        p=cfg.p,
        omega=omega,
        factors=factors,
        error_fro=error_fro,
        error_rel=error_rel,
        tail=tail,
        quality=quality,
        bound_rhs=rhs,
        seed=source.seed,
    )
