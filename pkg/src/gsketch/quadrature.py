"""Quadrature grids realizing the discrete L2 inner product on an interval."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exceptions import ConfigError


class GridFamily(str, Enum):
    CHEBYSHEV_CC = "chebcc"
    TRAPEZOID = "trapezoid"


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Nodes and positive weights on ``[a, b]``.

    ``sum(w * f(nodes))`` approximates the integral of ``f`` over the interval.
    """

    nodes: np.ndarray
    weights: np.ndarray
    family: GridFamily
    interval: tuple = field(default=(-1.0, 1.0))

    def __post_init__(self):
        if self.nodes.shape != self.weights.shape or self.nodes.ndim != 1:
            raise ConfigError("nodes and weights must be 1-D arrays of equal length")
        if self.nodes.size < 2:
            raise ConfigError("a quadrature grid needs at least two nodes")
        if np.any(np.diff(self.nodes) <= 0):
            raise ConfigError("grid nodes must be strictly increasing")
        if np.any(self.weights <= 0):
            raise ConfigError("quadrature weights must be positive")

    @property
    def size(self):
        return self.nodes.size

    @property
    def length(self):
        a, b = self.interval
        return b - a

    def inner(self, f, g):
        """Discrete inner product ``sum_i w_i f_i g_i`` (column-wise for 2-D input)."""
        f = np.asarray(f)
        g = np.asarray(g)
        if f.ndim == 1:
            return float(np.dot(self.weights * f, g))
        return (self.weights[:, None] * f).T @ g

    def norm(self, f):
        f = np.asarray(f)
        if f.ndim == 1:
            return float(np.sqrt(np.dot(self.weights, f * f)))
        return np.sqrt(self.weights @ (f * f))

    def integrate(self, f):
        return np.asarray(self.weights @ np.asarray(f))

    def matches(self, other, atol=1e-13):
        return (
            self.size == other.size
            and np.allclose(self.nodes, other.nodes, rtol=0, atol=atol)
            and np.allclose(self.weights, other.weights, rtol=0, atol=atol)
        )


def clenshaw_curtis(n):
    """Chebyshev points of the second kind on [-1, 1] with Clenshaw-Curtis weights.

    Weights come from the DCT formulation (Waldvogel 2006) for ``n`` points.
    """
    N = n - 1
    if N == 1:
        return np.array([-1.0, 1.0]), np.array([1.0, 1.0])
    theta = np.pi * np.arange(n) / N
    # sin-form of -cos(theta) keeps the nodes exactly antisymmetric
    x = np.sin(np.pi * (2 * np.arange(n) - N) / (2 * N))
    w = np.zeros(n)
    v = np.ones(N - 1)
    inner = theta[1:N]
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k * k - 1)
        v -= np.cos(N * inner) / (N**2 - 1)
    else:
        w[0] = w[N] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k * k - 1)
    w[1:N] = 2.0 * v / N
    return x, w


def make_grid(family, n, interval=(-1.0, 1.0)):
    """Build a quadrature grid of ``n`` points on ``interval``.

    ``family`` is ``"chebcc"`` (Chebyshev points of the second kind with
    Clenshaw-Curtis weights) or ``"trapezoid"`` (uniform nodes, trapezoid
    weights).
    """
    try:
        family = GridFamily(family)
    except ValueError as exc:
        raise ConfigError(f"unknown grid family {family!r}") from exc
    if isinstance(n, bool) or int(n) != n or n < 2:
        raise ConfigError(f"grid size must be an integer >= 2, got {n!r}")
    n = int(n)
    a, b = (float(v) for v in interval)
    if not (np.isfinite(a) and np.isfinite(b)) or b <= a:
        raise ConfigError(f"degenerate interval [{a}, {b}]")
    if family is GridFamily.CHEBYSHEV_CC:
        t, w = clenshaw_curtis(n)
    else:
        t = np.linspace(-1.0, 1.0, n)
        w = np.full(n, 2.0 / (n - 1))
        w[0] = w[-1] = 1.0 / (n - 1)
    half = 0.5 * (b - a)
    nodes = a + half * (t + 1.0)
    nodes[0], nodes[-1] = a, b
    return QuadratureGrid(nodes=nodes, weights=half * w, family=family, interval=(a, b))
