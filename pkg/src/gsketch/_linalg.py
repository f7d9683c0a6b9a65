"""Small dense linear-algebra kernels used across modules."""

import numpy as np


def weighted_similarity(K, weights_x, weights_y=None):
    """Return ``diag(sqrt(wx)) K diag(sqrt(wy))``.

    The singular values (or eigenvalues, for a symmetric kernel on a single
    grid) of the result approximate those of the integral operator with
    kernel ``K`` under the quadrature inner products.
    """
    sx = np.sqrt(weights_x)
    sy = sx if weights_y is None else np.sqrt(weights_y)
    return sx[:, None] * K * sy[None, :]


def aca_tolerance(values, x, y, eps=2.0**-52):
    """Absolute pivot tolerance for cross approximation of a sampled bivariate function.

    ``eps * N**(2/3) * max|domain| * max(grad_norm, vscale)``, where ``N`` is
    the larger grid size and the gradient norm is estimated by finite
    differences along both grid directions. This is the tolerance rule used by
    Chebfun2 when it builds a low-rank representation, so ranks computed with
    it are comparable to ranks reported from Chebfun.
    """
    values = np.asarray(values, dtype=float)
    m, n = values.shape
    grad = 0.0
    if n > 1:
        grad = max(grad, np.abs(np.diff(values, axis=1) / np.diff(y)[None, :]).max())
    if m > 1:
        grad = max(grad, np.abs(np.diff(values, axis=0) / np.diff(x)[:, None]).max())
    vscale = np.abs(values).max(initial=0.0)
    dom = max(np.abs(x).max(initial=0.0), np.abs(y).max(initial=0.0), 1.0)
    return eps * max(m, n) ** (2.0 / 3.0) * dom * max(grad, vscale)


def aca_rank(values, tol):
    """Rank reached by Gaussian elimination with complete pivoting before the pivot drops to ``tol``."""
    E = np.array(values, dtype=float, copy=True)
    rank = 0
    limit = min(E.shape)
    while rank < limit:
        i, j = np.unravel_index(np.argmax(np.abs(E)), E.shape)
        pivot = E[i, j]
        if abs(pivot) <= tol:
            break
        E -= np.outer(E[:, j], E[i, :] / pivot)
        rank += 1
    return rank
