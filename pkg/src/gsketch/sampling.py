"""Multivariate Gaussian draws and Gaussian-process sampling."""

from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_int, check_square_symmetric, psd_spectrum
from .covariance import CovarianceSpec, SequenceKind, discretize_covariance
from .exceptions import ConfigError

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class RandomSource:
    """Seeded, splittable source of Gaussian draws.

    ``(seed, stream, path)`` map to independent Philox counter-based
    generators, so per-trial streams give the same numbers regardless of
    the order in which trials run.
    """

    seed: int
    stream: int = 0
    path: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "seed", check_int(self.seed, "seed", minimum=0))
        object.__setattr__(self, "stream", check_int(self.stream, "stream", minimum=0))
        object.__setattr__(self, "path", tuple(check_int(i, "substream", minimum=0) for i in self.path))

    def generator(self):
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream, *self.path))
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, i):
        """Independent child stream ``i``; the parent is unaffected."""
        return replace(self, path=self.path + (i,))

    def standard_normal(self, shape):
        return self.generator().standard_normal(shape)


def as_random_source(rng):
    if isinstance(rng, RandomSource):
        return rng
    if rng is None:
        return RandomSource(int(np.random.SeedSequence().generate_state(1)[0]))
    return RandomSource(int(rng))


@dataclass(frozen=True, eq=False)
class FactoredCovariance:
    """Eigen-factorization ``K = basis @ diag(sqrt_eigenvalues**2) @ basis.T``.

    ``sqrt_eigenvalues`` is nonincreasing; eigenvalues that were negative
    rounding noise or below the truncation threshold are stored as 0.
    """

    basis: np.ndarray
    sqrt_eigenvalues: np.ndarray
    rank: int
    source: object = None

    @property
    def n(self):
        return self.basis.shape[0]

    @property
    def eigenvalues(self):
        return self.sqrt_eigenvalues**2

    @property
    def root(self):
        """``L`` with ``L @ L.T == K`` restricted to the retained eigenpairs."""
        r = self.rank
        return self.basis[:, :r] * self.sqrt_eigenvalues[:r]

    def reconstruct(self):
        L = self.root
        return L @ L.T


def factor_covariance(K, rtol=EPS, indefinite_tol=1e-6, source=None):
    """Eigen-factor a symmetric PSD matrix for sampling.

    Eigenvalues below ``rtol * lambda_1`` (including negative rounding
    artifacts) are set to zero, which truncates the expansion where the
    spectrum reaches machine precision. Eigenvectors are ordered by
    descending eigenvalue with the largest-magnitude entry made positive.

    Raises :class:`~gsketch.exceptions.NumericalError` when the smallest
    eigenvalue is below ``-indefinite_tol * lambda_1``.
    """
    K = check_square_symmetric(K, rtol=1e-10)
    K = 0.5 * (K + K.T)
    evals, evecs = psd_spectrum(K, indefinite_tol=indefinite_tol)
    top = max(evals[0], 0.0)
    keep = evals > rtol * top if top > 0 else np.zeros_like(evals, dtype=bool)
    evals = np.where(keep, evals, 0.0)
    idx = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[idx, np.arange(evecs.shape[1])])
    signs[signs == 0] = 1.0
    evecs = evecs * signs
    return FactoredCovariance(
        basis=evecs,
        sqrt_eigenvalues=np.sqrt(evals),
        rank=int(keep.sum()),
        source=source,
    )


def draw_mvn_matrix(fac, rng, count):
    """``n x count`` matrix whose columns are i.i.d. ``N(0, K)``.

    Implemented as ``basis @ diag(sqrt_eigenvalues) @ G`` with ``G``
    standard Gaussian of shape ``(rank, count)``.
    """
    count = check_int(count, "count", minimum=1)
    G = as_random_source(rng).standard_normal((fac.n, count))
    if fac.rank == 0:
        return np.zeros((fac.n, count))
    return fac.root @ G[: fac.rank]


def sample_gp_function(spec, grid, rng, factored=None):
    """Values on ``grid`` of one draw from ``GP(0, K)``.

    Mercer-form specs use ``sum_j sqrt(lambda_j) c_j psi_j`` truncated at the
    spec's ``n``; closed-form specs are discretized and eigen-factored (pass
    ``factored`` to reuse a factorization).
    """
    if not isinstance(spec, CovarianceSpec):
        raise ConfigError("spec must be a CovarianceSpec")
    source = as_random_source(rng)
    if spec.has_mercer_basis:
        lam = spec.mercer_eigenvalues()
        c = source.standard_normal(lam.size)
        return (np.sqrt(lam) * c) @ spec.mercer_basis(grid.nodes)
    if factored is None:
        factored = factor_covariance(discretize_covariance(spec, grid, check=False), source=spec)
    return draw_mvn_matrix(factored, source, 1)[:, 0]


def gp_partial_sums(spec, x, coeffs, terms):
    """Partial sums ``f_m = sum_{j=0}^{m} sqrt(lambda_{j+1}) c_j psi_j`` for each ``m`` in ``terms``.

    Rows follow ``terms``. ``coeffs`` holds the standard normal draws
    ``c_0, c_1, ...`` (at least the spec's truncation).
    """
    lam = spec.mercer_eigenvalues()
    coeffs = np.asarray(coeffs, dtype=float)[: lam.size]
    terms_contrib = (np.sqrt(lam) * coeffs)[:, None] * spec.mercer_basis(x)
    csum = np.cumsum(terms_contrib, axis=0)
    return np.stack([csum[min(m, lam.size - 1)] for m in terms])


def power_law_constant(seq):
    """Smallest ``M`` with ``lambda_{j+1} <= M (j+1)**-nu`` over the realized sequence."""
    lam = seq.eigenvalues()
    j = np.arange(1, lam.size + 1, dtype=float)
    return float(np.max(lam * j**seq.nu))


def truncation_tail_sup(seq, n, coeffs, M=None):
    """Certified bound ``S_n`` on ``sup |f - f_n|`` for a (2,2) Jacobi GP draw.

    ``S_n = 2 sqrt(M) sum_{j >= n+2} |c_{j-1}| j**((1 - nu)/2)`` where
    ``f_n`` keeps the terms of degree ``0..n`` and ``coeffs`` are the draw's
    standard normal coefficients ``c_0, c_1, ...``; the sum runs over the
    coefficients supplied. ``M`` defaults to :func:`power_law_constant`.
    """
    if seq.kind is not SequenceKind.POWER_LAW:
        raise ConfigError("truncation_tail_sup needs a power-law sequence (no decay constant otherwise)")
    n = check_int(n, "n", minimum=0)
    coeffs = np.abs(np.asarray(coeffs, dtype=float))
    if M is None:
        M = power_law_constant(seq)
    j = np.arange(n + 2, coeffs.size + 1, dtype=float)
    if j.size == 0:
        return 0.0
    terms = coeffs[n + 1 :] * j ** ((1.0 - seq.nu) / 2.0)
    return float(2.0 * np.sqrt(M) * np.sum(terms))
