"""scikit-learn style wrappers around the sketching routines."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .exceptions import ConfigError
from .hsop import DiscretizedKernel, hs_randomized_svd, l2_error
from .sampling import RandomSource, as_random_source
from .sketch import SketchConfig, generalized_rsvd


def _source(random_state):
    if random_state is None or isinstance(random_state, RandomSource):
        return as_random_source(random_state)
    if isinstance(random_state, (int, np.integer)):
        return RandomSource(int(random_state))
    raise ConfigError("random_state must be None, a non-negative int or a RandomSource")


class GeneralizedRandomizedSVD(TransformerMixin, BaseEstimator):
    """Truncated SVD via a randomized range finder with ``N(0, K)`` test vectors.

    Parameters
    ----------
    n_components : int
        Target rank ``k``.
    n_oversamples : int, default=5
        Extra test vectors ``p``; ``k + p`` columns are drawn.
    covariance : None, "identity", array of shape (n_features, n_features), CovarianceSpec or FactoredCovariance
        Covariance of the test vectors. ``None`` is the standard Gaussian sketch.
    grid : QuadratureGrid, optional
        Needed only when ``covariance`` is a :class:`~gsketch.covariance.CovarianceSpec`.
    t, u : float, default=1
        Parameters of the reported probabilistic bound.
    compute_quality : bool, default=True
        Compute the quality factors and bound from a dense SVD of ``X``.
    random_state : int, RandomSource or None

    Attributes
    ----------
    components_ : ndarray of shape (n_components, n_features)
    singular_values_ : ndarray of shape (n_components,)
    range_basis_ : ndarray of shape (n_samples, k + p)
        Orthonormal basis ``Q`` of the sketched range (fewer columns if rank deficient).
    result_ : SketchResult
    error_ : float
        Relative Frobenius error of the full ``Q Q^T X`` approximation.
    """

    def __init__(
        self,
        n_components=10,
        n_oversamples=5,
        covariance=None,
        grid=None,
        t=1.0,
        u=1.0,
        compute_quality=True,
        random_state=None,
    ):
        self.n_components = n_components
        self.n_oversamples = n_oversamples
        self.covariance = covariance
        self.grid = grid
        self.t = t
        self.u = u
        self.compute_quality = compute_quality
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_matrix(X, "X")
        cfg = SketchConfig(self.n_components, self.n_oversamples, self.t, self.u)
        res = generalized_rsvd(
            X,
            self.covariance,
            cfg,
            _source(self.random_state),
            grid=self.grid,
            compute_quality=self.compute_quality,
        )
        Q, B = res.factors.Q, res.factors.B
        Ub, s, Vt = np.linalg.svd(B, full_matrices=False)
        k = min(self.n_components, s.size)
        self.result_ = res
        self.range_basis_ = Q
        self.components_ = Vt[:k]
        self.singular_values_ = s[:k]
        self.left_vectors_ = Q @ Ub[:, :k]
        self.error_ = res.error_rel
        self.quality_ = res.quality
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise ConfigError(f"X has {X.shape[1]} features, fitted with {self.n_features_in_}")
        return X @ self.components_.T

    def inverse_transform(self, Xt):
        check_is_fitted(self, "components_")
        return np.asarray(Xt, dtype=float) @ self.components_


class HSKernelLearner(BaseEstimator):
    """Learn a low-rank integral operator from its action on Gaussian-process samples.

    ``fit`` takes a :class:`~gsketch.hsop.DiscretizedKernel` standing in
    for the black-box operator; only its forward and adjoint actions are
    used. ``predict`` applies the learned operator to functions sampled on
    the kernel's ``grid_y``.

    Parameters
    ----------
    n_samples : int
        Number of input functions ``k``.
    covariance : CovarianceSpec or FactoredCovariance
    random_state : int, RandomSource or None
    """

    def __init__(self, n_samples=100, covariance=None, random_state=None):
        self.n_samples = n_samples
        self.covariance = covariance
        self.random_state = random_state

    def fit(self, kernel, y=None):
        if not isinstance(kernel, DiscretizedKernel):
            raise ConfigError("HSKernelLearner.fit expects a DiscretizedKernel")
        if self.covariance is None:
            raise ConfigError("covariance is required")
        self.learned_ = hs_randomized_svd(kernel, self.covariance, self.n_samples, _source(self.random_state))
        self.rank_ = self.learned_.rank
        self.error_ = l2_error(kernel, self.learned_, relative=True)
        return self

    def predict(self, f):
        check_is_fitted(self, "learned_")
        f = np.asarray(f, dtype=float)
        if f.shape[0] != self.learned_.grid_y.size:
            raise ConfigError(f"input has {f.shape[0]} values, grid_y has {self.learned_.grid_y.size}")
        return self.learned_.apply(f)

    def score(self, kernel, y=None):
        """Negative relative L2 error against ``kernel`` (higher is better)."""
        check_is_fitted(self, "learned_")
        return -l2_error(kernel, self.learned_, relative=True)
