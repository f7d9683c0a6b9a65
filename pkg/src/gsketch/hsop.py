"""Randomized SVD for Hilbert-Schmidt integral operators on quadrature grids.

An integral operator ``(F f)(x) = int G(x, y) f(y) dy`` is represented by
its kernel sampled on a tensor grid. Functions are vectors of grid values
and the quadrature weights realize the L2 inner product, so the discrete
operations below mirror their continuous counterparts: ``F f`` is
``G @ (w_y * f)`` and the adjoint is ``G.T @ (w_x * q)``.
"""

import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._linalg import aca_rank, aca_tolerance, weighted_similarity
from ._validation import check_int, check_matrix, check_vector
from .covariance import CovarianceSpec, discretize_covariance
from .exceptions import ConfigError
from .quadrature import GridFamily, QuadratureGrid, make_grid
from .sampling import FactoredCovariance, as_random_source, draw_mvn_matrix, factor_covariance

BESSEL_ENVELOPE = 1e4
WEIGHTED_QR_TOL = 1e-12
BUILTIN_KERNELS = ("cossin", "bessel")
DEFAULT_GRID_SIZE = {"cossin": 600, "bessel": 1000}


# --------------------------------------------------------------------------
# Bessel J0
# --------------------------------------------------------------------------


def bessel_nodes(x):
    """Trapezoid panel count for ``J0(x)``: ``ceil(8 + 1.5 |x|)``."""
    return int(math.ceil(8.0 + 1.5 * abs(float(x))))


def _j0_trapezoid(x, panels):
    # periodic analytic integrand: the trapezoid rule on [0, pi] converges geometrically
    panels += panels % 2
    t = np.pi * np.arange(1, panels // 2) / panels
    inner = np.cos(np.multiply.outer(x, np.sin(t)))
    mid = np.cos(x)  # t = pi/2
    return (1.0 + 2.0 * inner.sum(axis=-1) + mid) / panels


def bessel_j0(x, oversample=1):
    """Bessel function ``J0(x) = (1/pi) int_0^pi cos(x sin t) dt`` for ``|x| <= 1e4``.

    The trapezoid rule with ``ceil(8 + 1.5|x|)`` panels (times
    ``oversample``) is accurate to about ``1e-14`` absolute. Array input is
    bucketed by panel count.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > BESSEL_ENVELOPE):
        raise ConfigError(f"bessel_j0 is accurate only for |x| <= {BESSEL_ENVELOPE:g}")
    scalar = x.ndim == 0
    flat = np.abs(x.ravel())
    out = np.empty_like(flat)
    panels = np.ceil(8.0 + 1.5 * flat).astype(int) * oversample
    # round panel counts up to multiples of 16 so few buckets cover the range
    buckets = ((panels + 15) // 16) * 16
    for m in np.unique(buckets):
        idx = np.nonzero(buckets == m)[0]
        for chunk in np.array_split(idx, max(1, idx.size * int(m) // 4_000_000 + 1)):
            out[chunk] = _j0_trapezoid(flat[chunk], int(m))
    out = out.reshape(x.shape)
    return float(out) if scalar else out


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscretizedKernel:
    """Kernel values ``G[i, j] = G(x_i, y_j)`` on a pair of quadrature grids."""

    grid_x: QuadratureGrid
    grid_y: QuadratureGrid
    values: np.ndarray = field(repr=False)
    provenance: tuple = ("builtin", None)

    def __post_init__(self):
        if self.values.shape != (self.grid_x.size, self.grid_y.size):
            raise ConfigError(
                f"kernel shape {self.values.shape} does not match grids "
                f"({self.grid_x.size}, {self.grid_y.size})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("kernel values must be finite")

    @property
    def shape(self):
        return self.values.shape

    def weighted_matrix(self):
        """``W_x^(1/2) G W_y^(1/2)``, whose singular values approximate the operator's."""
        return weighted_similarity(self.values, self.grid_x.weights, self.grid_y.weights)

    def l2_norm(self):
        return weighted_frobenius(self.values, self.grid_x.weights, self.grid_y.weights)

    def singular_values(self):
        return np.linalg.svd(self.weighted_matrix(), compute_uv=False)

    def numerical_rank(self, eps=2.0**-52):
        """Complete-pivoting cross-approximation rank with the scaled tolerance of
        :func:`gsketch._linalg.aca_tolerance`."""
        tol = aca_tolerance(self.values, self.grid_x.nodes, self.grid_y.nodes, eps=eps)
        return aca_rank(self.values, tol)

    def transpose(self):
        """Kernel ``G(y, x)`` of the adjoint operator."""
        return DiscretizedKernel(self.grid_y, self.grid_x, self.values.T.copy(), self.provenance)


def weighted_frobenius(values, wx, wy):
    return float(np.sqrt(np.einsum("i,ij,j->", wx, values * values, wy)))


def _cossin(x, y):
    return np.cos(10.0 * (x**2 + y)) * np.sin(10.0 * (x + y**2))


def _bessel(x, y):
    return bessel_j0(100.0 * (x * y + y**2))


_BUILTINS = {"cossin": _cossin, "bessel": _bessel}


def build_kernel(source, grid_x=None, grid_y=None):
    """Tabulate a kernel on ``grid_x x grid_y``.

    ``source`` is a builtin name (``"cossin"``: ``cos(10(x^2+y)) sin(10(x+y^2))``;
    ``"bessel"``: ``J0(100(xy+y^2))``) or a path to a tabulated kernel file,
    in which case the file's own grids are used and ``grid_x``/``grid_y``
    must be omitted.
    """
    if isinstance(source, (str, os.PathLike)) and str(source) in _BUILTINS:
        name = str(source)
        if grid_x is None:
            grid_x = make_grid("chebcc", DEFAULT_GRID_SIZE[name])
        if grid_y is None:
            grid_y = grid_x
        for g in (grid_x, grid_y):
            if g.interval[0] < -1.0 - 1e-12 or g.interval[1] > 1.0 + 1e-12:
                raise ConfigError(f"builtin kernel {name!r} is defined on [-1, 1]^2")
        X, Y = np.meshgrid(grid_x.nodes, grid_y.nodes, indexing="ij")
        return DiscretizedKernel(grid_x, grid_y, _BUILTINS[name](X, Y), ("builtin", name))
    if isinstance(source, (str, os.PathLike)):
        if grid_x is not None or grid_y is not None:
            raise ConfigError("tabulated kernels carry their own grids")
        return read_tabulated(source)
    raise ConfigError(f"unknown kernel source {source!r}; builtins are {BUILTIN_KERNELS}")


def _parse_header(line, key):
    prefix = f"# {key}:"
    if not line.startswith(prefix):
        raise ConfigError(f"malformed kernel file: expected a '{prefix}' header line")
    return line[len(prefix):].strip()


def _grid_from_nodes(nodes, family):
    nodes = np.asarray(nodes, dtype=float)
    grid = make_grid(family, nodes.size, (nodes[0], nodes[-1]))
    scale = max(1.0, float(np.abs(nodes).max()))
    if np.abs(grid.nodes - nodes).max() > 1e-10 * scale:
        raise ConfigError(f"tabulated nodes are not a {family.value} grid on [{nodes[0]}, {nodes[-1]}]")
    # keep the file's nodes verbatim; weights come from the declared family
    return QuadratureGrid(nodes=nodes, weights=grid.weights, family=grid.family, interval=grid.interval)


def read_tabulated(path):
    """Load a tabulated kernel (CSV with ``# gridx:``, ``# gridy:``, ``# family:`` headers)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read kernel file {path}: {exc}") from exc
    lines = text.splitlines()
    if len(lines) < 4:
        raise ConfigError("malformed kernel file: missing headers or data")
    try:
        gx = [float(v) for v in _parse_header(lines[0], "gridx").split(",")]
        gy = [float(v) for v in _parse_header(lines[1], "gridy").split(",")]
        family = GridFamily(_parse_header(lines[2], "family"))
        rows = [[float(v) for v in row] for row in csv.reader(lines[3:]) if row]
    except ValueError as exc:
        raise ConfigError(f"malformed kernel file {path}: {exc}") from exc
    values = np.asarray(rows, dtype=float)
    if values.shape != (len(gx), len(gy)):
        raise ConfigError(f"kernel file has data of shape {values.shape}, grids ({len(gx)}, {len(gy)})")
    grid_x = _grid_from_nodes(gx, family)
    grid_y = _grid_from_nodes(gy, family)
    return DiscretizedKernel(grid_x, grid_y, values, ("tabulated", str(path)))


def format_tabulated(values, grid_x, grid_y):
    buf = io.StringIO()
    buf.write("# gridx: " + ",".join(repr(float(v)) for v in grid_x.nodes) + "\n")
    buf.write("# gridy: " + ",".join(repr(float(v)) for v in grid_y.nodes) + "\n")
    if grid_x.family != grid_y.family:
        raise ConfigError("tabulated format needs both grids from the same family")
    buf.write(f"# family: {grid_x.family.value}\n")
    for row in np.asarray(values, dtype=float):
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def write_tabulated(path, values, grid_x, grid_y):
    """Write kernel values in the tabulated CSV format (round-trips exactly)."""
    Path(path).write_text(format_tabulated(values, grid_x, grid_y), encoding="utf-8")


# --------------------------------------------------------------------------
# operator actions
# --------------------------------------------------------------------------


def apply_operator(kernel, f):
    """``(F f)(x_i) = sum_j G(x_i, y_j) w_j f(y_j)``; ``f`` may hold several columns."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] != kernel.grid_y.size:
        raise ConfigError(f"input has {f.shape[0]} values, grid_y has {kernel.grid_y.size}")
    wf = kernel.grid_y.weights * f if f.ndim == 1 else kernel.grid_y.weights[:, None] * f
    return kernel.values @ wf


def apply_adjoint(kernel, q):
    """``(F* q)(y_j) = sum_i G(x_i, y_j) w_i q(x_i)``; ``q`` may hold several columns."""
    q = np.asarray(q, dtype=float)
    if q.shape[0] != kernel.grid_x.size:
        raise ConfigError(f"input has {q.shape[0]} values, grid_x has {kernel.grid_x.size}")
    wq = kernel.grid_x.weights * q if q.ndim == 1 else kernel.grid_x.weights[:, None] * q
    return kernel.values.T @ wq


def weighted_qr(Y, weights, rank_tol=WEIGHTED_QR_TOL):
    """Columns orthonormal under ``<f, g> = sum_i w_i f_i g_i`` spanning ``range(Y)``.

    Computed as ``W^(-1/2) orth(W^(1/2) Y)`` with column pivoting; columns
    whose pivot is below ``rank_tol * ||W^(1/2) Y||_F`` are dropped.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    w = check_vector(weights, Y.shape[0], "weights")
    from .sketch import orthonormal_basis

    s = np.sqrt(w)
    Qs = orthonormal_basis(s[:, None] * Y, rank_tol)
    return Qs / s[:, None]


@dataclass(frozen=True, eq=False)
class LearnedKernel:
    """Low-rank kernel ``G_k(x, y) = sum_i q_i(x) b_i(y)``."""

    grid_x: QuadratureGrid
    grid_y: QuadratureGrid
    Q: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)

    @property
    def rank(self):
        return self.Q.shape[1]

    @property
    def values(self):
        if self.rank == 0:
            return np.zeros((self.grid_x.size, self.grid_y.size))
        return self.Q @ self.B

    def apply(self, f):
        f = np.asarray(f, dtype=float)
        wf = self.grid_y.weights * f if f.ndim == 1 else self.grid_y.weights[:, None] * f
        return self.Q @ (self.B @ wf)

    def as_kernel(self):
        return DiscretizedKernel(self.grid_x, self.grid_y, self.values, ("learned", self.rank))


def l2_error(kernel, learned, relative=False):
    """Weighted Frobenius distance ``sqrt(sum_ij w_i w_j (G - G_k)_ij^2)`` (over ``||G||`` if ``relative``)."""
    other = learned.values
    if not (kernel.grid_x.matches(learned.grid_x) and kernel.grid_y.matches(learned.grid_y)):
        raise ConfigError("kernel and learned kernel live on different grids")
    wx, wy = kernel.grid_x.weights, kernel.grid_y.weights
    err = weighted_frobenius(kernel.values - other, wx, wy)
    if relative:
        norm = weighted_frobenius(kernel.values, wx, wy)
        return err / norm if norm > 0 else 0.0
    return err


def _factor_for_grid(cov, grid):
    if isinstance(cov, FactoredCovariance):
        if cov.n != grid.size:
            raise ConfigError("factored covariance does not match grid_y")
        return cov
    if not isinstance(cov, CovarianceSpec):
        raise ConfigError("cov must be a CovarianceSpec or FactoredCovariance")
    a, b = cov.domain
    ga, gb = grid.interval
    if cov.form.value != "matrix" and (abs(a - ga) > 1e-12 * max(1, abs(a)) or abs(b - gb) > 1e-12 * max(1, abs(b))):
        raise ConfigError(f"covariance domain [{a}, {b}] does not match grid interval [{ga}, {gb}]")
    return factor_covariance(discretize_covariance(cov, grid, check=False), source=cov)


def sample_input_functions(cov, grid, k, rng):
    """``k`` GP draws on ``grid`` as columns, via the eigen-factored discretized covariance."""
    fac = _factor_for_grid(cov, grid)
    return draw_mvn_matrix(fac, rng, k)


def learn_from_samples(kernel, omega, rank_tol=WEIGHTED_QR_TOL):
    """Range finding and adjoint projection for already-sampled input functions ``omega``."""
    Y = apply_operator(kernel, omega)
    Q = weighted_qr(Y, kernel.grid_x.weights, rank_tol)
    # row i of B is the adjoint applied to q_i, so G_k = sum_i q_i(x) (F* q_i)(y)
    B = apply_adjoint(kernel, Q).T
    return LearnedKernel(kernel.grid_x, kernel.grid_y, Q, B)


def hs_randomized_svd(kernel, cov, k, rng):
    """Learn a low-rank approximation of an integral operator from ``k`` GP input functions.

    Draws ``k`` functions from ``GP(0, cov)`` on ``kernel.grid_y``, applies
    the operator, orthonormalizes in the weighted inner product and applies
    the adjoint to each basis function. ``cov`` may be a pre-factored
    covariance on ``grid_y`` to amortize the factorization over repeats.
    """
    k = check_int(k, "k", minimum=0)
    if k == 0:
        return LearnedKernel(kernel.grid_x, kernel.grid_y, np.zeros((kernel.grid_x.size, 0)),
                             np.zeros((0, kernel.grid_y.size)))
    source = as_random_source(rng)
    omega = sample_input_functions(cov, kernel.grid_y, k, source)
    return learn_from_samples(kernel, omega)


def best_error_tail(kernel, relative=True):
    """``sqrt(sum_{j>k} sigma_j^2)`` for ``k = 0..n`` from the weighted SVD of the kernel."""
    s = kernel.singular_values()
    tail = np.sqrt(np.maximum(np.cumsum((s**2)[::-1])[::-1], 0.0))
    tail = np.append(tail, 0.0)
    return tail / tail[0] if relative and tail[0] > 0 else tail


def operator_quality_factor(kernel, cov, k, variable="x"):
    """``gamma_k`` of a discretized covariance against the kernel's leading singular functions.

    ``G(x, y) = sum_j sigma_j u_j(x) v_j(y)``. With ``variable="x"`` the
    covariance is discretized on ``grid_x`` and tested against ``u_1..u_k``;
    ``variable="y"`` uses ``grid_y`` and ``v_1..v_k``. Chebfun-style
    bivariate SVDs call the x-side functions the right singular functions,
    since their matrices index rows by y. Everything is expressed in the
    orthonormal coordinates ``W^(1/2)`` of the quadrature rule.
    """
    from .sketch import gamma_k

    if variable not in ("x", "y"):
        raise ConfigError("variable must be 'x' or 'y'")
    k = check_int(k, "k", minimum=1)
    grid = kernel.grid_x if variable == "x" else kernel.grid_y
    U, _, Vt = np.linalg.svd(kernel.weighted_matrix(), full_matrices=False)
    V1 = U[:, :k] if variable == "x" else Vt[:k].T
    K = cov if isinstance(cov, np.ndarray) else discretize_covariance(cov, grid, check=False)
    C = weighted_similarity(K, grid.weights)
    return gamma_k(0.5 * (C + C.T), V1)
