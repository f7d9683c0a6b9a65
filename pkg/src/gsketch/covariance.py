"""Covariance kernels, designed eigenvalue sequences and Mercer bases.

Closed-form kernels (squared-exponential, periodic) are sampled pointwise;
Mercer-form kernels (weighted Jacobi, Laplacian Green's function) are built
from an explicit eigenvalue sequence and an orthonormal basis, so their
eigenpairs are known exactly.
"""

import functools
import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import gammaln

from ._linalg import aca_rank, aca_tolerance, weighted_similarity
from ._validation import check_int, check_real, check_square_symmetric
from .exceptions import ConfigError, ContinuityWarning
from .quadrature import QuadratureGrid

logger = logging.getLogger(__name__)

DEFAULT_TRUNCATION = 500
RISSANEN_CUTOFF = 10**7
_DOMAIN_SLACK = 1e-12


# --------------------------------------------------------------------------
# eigenvalue sequences
# --------------------------------------------------------------------------


def log2_star(j):
    """Iterated binary logarithm ``log2(j) + log2(log2(j)) + ...`` over positive iterates.

    The sum stops after the first iterate that is ``<= 1``, since every later
    iterate is non-positive. ``log2_star(1) == 0`` and ``log2_star(2) == 1``.
    """
    j = np.asarray(j, dtype=float)
    if np.any(j < 1):
        raise ConfigError("log2_star is defined for j >= 1")
    total = np.zeros_like(j)
    cur = j.copy()
    active = cur > 1.0
    while np.any(active):
        cur = np.where(active, np.log2(np.where(active, cur, 2.0)), cur)
        total += np.where(active, cur, 0.0)
        active = active & (cur > 1.0)
    return total if total.ndim else float(total)


def _log2_iterate(x, m):
    for _ in range(m):
        x = math.log2(x)
    return x


def _positive_iterates(x):
    m, cur = 0, float(x)
    while cur > 1.0:
        cur = math.log2(cur)
        m += 1
    return m


def rissanen_tail(cutoff):
    """Closed-form integral estimate of ``sum_{i > cutoff} 2**(-log2_star(i))``.

    On a range where ``log2_star`` has ``m`` positive iterates the summand is
    ``1 / (x log2 x ... log2^(m-1) x)`` whose antiderivative is
    ``ln(2)**m * log2^(m)(x)``. The iterate count grows by one each time the
    ``m``-th iterate reaches 1, which yields a geometric series in ``ln 2``.
    """
    m = _positive_iterates(cutoff)
    ln2 = math.log(2.0)
    current = _log2_iterate(float(cutoff), m)
    return ln2**m * (1.0 - current) + ln2 ** (m + 1) / (1.0 - ln2)


@functools.lru_cache(maxsize=4)
def rissanen_constant(cutoff=RISSANEN_CUTOFF):
    """Normalizing constant ``c0 = sum_{i >= 2} 2**(-log2_star(i))``.

    Summed directly up to ``cutoff`` in blocks, plus the integral tail
    estimate from :func:`rissanen_tail`.
    """
    cutoff = check_int(cutoff, "cutoff", minimum=2)
    partial = 0.0
    block = 1 << 20
    for start in range(2, cutoff + 1, block):
        i = np.arange(start, min(start + block, cutoff + 1), dtype=float)
        partial += float(np.sum(np.exp2(-log2_star(i))))
    tail = rissanen_tail(cutoff)
    logger.info("Rissanen c0: partial sum to %d = %.12f, tail estimate = %.6f", cutoff, partial, tail)
    return partial + tail


class SequenceKind(str, Enum):
    RISSANEN = "rissanen"
    SCALED_RISSANEN = "scaled_rissanen"
    POWER_LAW = "power_law"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class EigenSequence:
    """Positive nonincreasing weights ``lambda_1 >= ... >= lambda_n > 0``.

    Parameters
    ----------
    kind : {"rissanen", "scaled_rissanen", "power_law", "explicit"}
    n : int
        Truncation, the number of weights.
    nu : float, optional
        Decay exponent for ``power_law`` (``lambda_j = j**-nu``), must be > 1.
    values : tuple of float, optional
        The weights for ``explicit`` sequences.
    """

    kind: SequenceKind
    n: int = DEFAULT_TRUNCATION
    nu: float | None = None
    values: tuple | None = None

    def __post_init__(self):
        try:
            kind = SequenceKind(self.kind)
        except ValueError as exc:
            raise ConfigError(f"unknown eigenvalue sequence kind {self.kind!r}") from exc
        object.__setattr__(self, "kind", kind)
        if kind is SequenceKind.EXPLICIT:
            if self.values is None or len(self.values) == 0:
                raise ConfigError("explicit sequence needs a nonempty list of values")
            vals = tuple(float(v) for v in self.values)
            arr = np.asarray(vals)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ConfigError("explicit eigenvalues must be finite and positive")
            if np.any(np.diff(arr) > 0):
                raise ConfigError("explicit eigenvalues must be nonincreasing")
            object.__setattr__(self, "values", vals)
            object.__setattr__(self, "n", len(vals))
        else:
            object.__setattr__(self, "n", check_int(self.n, "n", minimum=1))
        if kind is SequenceKind.POWER_LAW:
            if self.nu is None:
                raise ConfigError("power_law sequence needs nu")
            nu = check_real(self.nu, "nu")
            if nu <= 1:
                raise ConfigError(f"power_law needs nu > 1 for summability, got {nu}")
            object.__setattr__(self, "nu", nu)

    @classmethod
    def rissanen(cls, n=DEFAULT_TRUNCATION):
        return cls(SequenceKind.RISSANEN, n=n)

    @classmethod
    def scaled_rissanen(cls, n=DEFAULT_TRUNCATION):
        return cls(SequenceKind.SCALED_RISSANEN, n=n)

    @classmethod
    def power_law(cls, nu, n=DEFAULT_TRUNCATION):
        return cls(SequenceKind.POWER_LAW, n=n, nu=nu)

    @classmethod
    def explicit(cls, values):
        return cls(SequenceKind.EXPLICIT, values=tuple(values))

    def eigenvalues(self):
        """Array ``[lambda_1, ..., lambda_n]``."""
        return _sequence_values(self)

    def __call__(self, j):
        return eigen_sequence_eval(self, j)

    def to_dict(self):
        out = {"kind": self.kind.value, "n": self.n}
        if self.nu is not None:
            out["nu"] = self.nu
        if self.values is not None:
            out["values"] = list(self.values)
        return out

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict) or "kind" not in d:
            raise ConfigError(f"malformed eigenvalue sequence {d!r}")
        return cls(d["kind"], n=d.get("n", DEFAULT_TRUNCATION), nu=d.get("nu"), values=d.get("values"))


@functools.lru_cache(maxsize=32)
def _sequence_values_cached(kind, n, nu, values):
    j = np.arange(1, n + 1, dtype=float)
    if kind is SequenceKind.POWER_LAW:
        return j ** (-nu)
    if kind is SequenceKind.EXPLICIT:
        return np.asarray(values, dtype=float)
    r = 1.0 / (rissanen_constant() * np.exp2(log2_star(j)))
    return r / j if kind is SequenceKind.SCALED_RISSANEN else r


def _sequence_values(seq):
    vals = _sequence_values_cached(seq.kind, seq.n, seq.nu, seq.values)
    vals = vals.copy()
    vals.flags.writeable = False
    return vals


def eigen_sequence_eval(seq, j):
    """Return ``lambda_j`` for ``1 <= j <= seq.n``.

    >>> eigen_sequence_eval(EigenSequence.power_law(4.0, n=10), 2)
    0.0625
    """
    j = check_int(j, "j", minimum=1)
    if j > seq.n:
        raise ConfigError(f"index {j} beyond truncation n={seq.n}")
    if seq.kind is SequenceKind.POWER_LAW:
        return float(j) ** (-seq.nu)
    if seq.kind is SequenceKind.EXPLICIT:
        return seq.values[j - 1]
    r = 1.0 / (rissanen_constant() * 2.0 ** log2_star(j))
    return r / j if seq.kind is SequenceKind.SCALED_RISSANEN else r


def first_moment_diverges(seq):
    """Heuristic check that ``sum_j j * lambda_j`` fails to converge as ``n`` grows."""
    if seq.kind is SequenceKind.POWER_LAW:
        return seq.nu <= 2.0
    if seq.kind is SequenceKind.RISSANEN:
        return True
    if seq.kind is SequenceKind.SCALED_RISSANEN:
        return False
    lam = seq.eigenvalues()
    if lam.size < 8:
        return False
    j = np.arange(1, lam.size + 1, dtype=float)
    half = lam.size // 2
    slope = np.polyfit(np.log(j[half:]), np.log(j[half:] * lam[half:]), 1)[0]
    return slope >= -1.0


# --------------------------------------------------------------------------
# Jacobi polynomials
# --------------------------------------------------------------------------


def _check_alpha(alpha):
    alpha = check_int(alpha, "alpha", minimum=0)
    if alpha % 2:
        raise ConfigError(f"alpha must be an even nonnegative integer, got {alpha}")
    return alpha


def _check_unit_interval(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + _DOMAIN_SLACK):
        raise ConfigError("Jacobi polynomials are evaluated on [-1, 1]")
    return np.clip(x, -1.0, 1.0)


def jacobi_norms(nmax, alpha):
    """Squared norms ``h_j`` of ``P_j^(alpha, alpha)`` under ``(1 - x**2)**alpha``, j = 0..nmax."""
    j = np.arange(nmax + 1, dtype=float)
    a = float(alpha)
    log_h = (
        (2 * a + 1) * math.log(2.0)
        - np.log(2 * j + 2 * a + 1)
        + 2 * gammaln(j + a + 1)
        - gammaln(j + 2 * a + 1)
        - gammaln(j + 1)
    )
    return np.exp(log_h)


def jacobi_basis(nmax, alpha, x):
    """Rows ``w**(1/2) * Ptilde_j^(alpha, alpha)(x)`` for ``j = 0..nmax``.

    Uses the three-term recurrence for the classical ``P_j^(alpha, alpha)``
    and then the closed-form norms, so each row has unit L2 norm on [-1, 1].
    """
    alpha = _check_alpha(alpha)
    nmax = check_int(nmax, "nmax", minimum=0)
    x = _check_unit_interval(x)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    a = float(alpha)
    P = np.empty((nmax + 1, x.size))
    P[0] = 1.0
    if nmax >= 1:
        P[1] = (a + 1.0) * x
    for n in range(2, nmax + 1):
        c = 2 * n + 2 * a
        lead = 2.0 * n * (n + 2 * a) * (c - 2)
        P[n] = ((c - 1) * c * (c - 2) * x * P[n - 1] - 2.0 * (n + a - 1) ** 2 * c * P[n - 2]) / lead
    P /= np.sqrt(jacobi_norms(nmax, alpha))[:, None]
    P *= ((1.0 - x) * (1.0 + x)) ** (alpha // 2)
    return P[:, 0] if scalar else P


def jacobi_poly_weighted(j, alpha, x):
    """``w_{alpha,alpha}(x)**(1/2) * Ptilde_j^(alpha,alpha)(x)`` with unit L2 norm on [-1, 1]."""
    j = check_int(j, "j", minimum=0)
    return jacobi_basis(j, alpha, x)[j]


def jacobi_kernel_eval(alpha, seq, x, y):
    """Truncated Mercer sum ``sum_{j<n} lambda_{j+1} phi_j(x) phi_j(y)`` of the Jacobi kernel.

    ``x`` and ``y`` broadcast against each other. For ``alpha == 2`` a
    :class:`ContinuityWarning` is emitted when ``sum_j j lambda_j`` looks
    divergent, since the series then need not converge uniformly.
    """
    alpha = _check_alpha(alpha)
    if not isinstance(seq, EigenSequence):
        raise ConfigError("seq must be an EigenSequence")
    if alpha == 2 and first_moment_diverges(seq):
        warnings.warn(
            "sum_j j*lambda_j appears divergent; the (2,2) Jacobi kernel may be discontinuous",
            ContinuityWarning,
            stacklevel=2,
        )
    lam = seq.eigenvalues()
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    shape = x.shape
    Px = jacobi_basis(seq.n - 1, alpha, x.ravel())
    Py = jacobi_basis(seq.n - 1, alpha, y.ravel())
    out = np.einsum("j,jk,jk->k", lam, Px, Py)
    return out.reshape(shape) if shape else float(out[0])


# --------------------------------------------------------------------------
# Laplacian Green's function
# --------------------------------------------------------------------------


def laplace_green_eigen(n):
    """``n``-th eigenpair of the Green's function of ``-u''`` on [0, 1] with Dirichlet conditions.

    Returns ``(1 / (pi n)**2, psi)`` with ``psi(x) = sqrt(2) sin(n pi x)``.
    """
    n = check_int(n, "n", minimum=1)

    def psi(x):
        return math.sqrt(2.0) * np.sin(n * np.pi * np.asarray(x, dtype=float))

    return 1.0 / (math.pi * n) ** 2, psi


# --------------------------------------------------------------------------
# covariance specifications
# --------------------------------------------------------------------------


class CovarianceForm(str, Enum):
    SQEXP = "sqexp"
    PERIODIC = "periodic"
    JACOBI = "jacobi"
    LAPLACE_GREEN = "laplace_green"
    MATRIX = "matrix"


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """A covariance kernel on an interval, either closed-form or in Mercer form.

    Use the constructors :meth:`sqexp`, :meth:`periodic`, :meth:`jacobi`,
    :meth:`laplace_green` and :meth:`explicit_matrix`.
    """

    form: CovarianceForm
    domain: tuple = (-1.0, 1.0)
    ell: float | None = None
    alpha: int | None = None
    seq: EigenSequence | None = None
    n: int | None = None
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        try:
            form = CovarianceForm(self.form)
        except ValueError as exc:
            raise ConfigError(f"unknown covariance form {self.form!r}") from exc
        object.__setattr__(self, "form", form)
        a, b = (float(v) for v in self.domain)
        if not (np.isfinite(a) and np.isfinite(b)) or b <= a:
            raise ConfigError(f"degenerate covariance domain [{a}, {b}]")
        object.__setattr__(self, "domain", (a, b))
        if form in (CovarianceForm.SQEXP, CovarianceForm.PERIODIC):
            if self.ell is None:
                raise ConfigError(f"{form.value} kernel needs a length scale ell")
            object.__setattr__(self, "ell", check_real(self.ell, "ell", minimum=0.0, strict=True))
        elif form is CovarianceForm.JACOBI:
            object.__setattr__(self, "alpha", _check_alpha(2 if self.alpha is None else self.alpha))
            if not isinstance(self.seq, EigenSequence):
                raise ConfigError("jacobi kernel needs an EigenSequence")
        elif form is CovarianceForm.LAPLACE_GREEN:
            n = self.n if self.n is not None else (self.seq.n if self.seq else DEFAULT_TRUNCATION)
            object.__setattr__(self, "n", check_int(n, "n", minimum=1))
        elif form is CovarianceForm.MATRIX:
            if self.matrix is None:
                raise ConfigError("matrix covariance needs a matrix")
            K = check_square_symmetric(self.matrix, "covariance matrix")
            K.flags.writeable = False
            object.__setattr__(self, "matrix", K)

    @classmethod
    def sqexp(cls, ell, domain=(-1.0, 1.0)):
        return cls(CovarianceForm.SQEXP, domain=domain, ell=ell)

    @classmethod
    def periodic(cls, ell, domain=(-1.0, 1.0)):
        return cls(CovarianceForm.PERIODIC, domain=domain, ell=ell)

    @classmethod
    def jacobi(cls, seq, alpha=2, domain=(-1.0, 1.0)):
        return cls(CovarianceForm.JACOBI, domain=domain, alpha=alpha, seq=seq)

    @classmethod
    def laplace_green(cls, n=DEFAULT_TRUNCATION, domain=(0.0, 1.0)):
        return cls(CovarianceForm.LAPLACE_GREEN, domain=domain, n=n)

    @classmethod
    def explicit_matrix(cls, K):
        return cls(CovarianceForm.MATRIX, matrix=np.asarray(K, dtype=float))

    @property
    def is_closed_form(self):
        return self.form in (CovarianceForm.SQEXP, CovarianceForm.PERIODIC)

    @property
    def has_mercer_basis(self):
        return self.form in (CovarianceForm.JACOBI, CovarianceForm.LAPLACE_GREEN)

    @property
    def truncation(self):
        if self.form is CovarianceForm.JACOBI:
            return self.seq.n
        return self.n

    def mercer_eigenvalues(self):
        if self.form is CovarianceForm.JACOBI:
            scale = 0.5 * (self.domain[1] - self.domain[0])
            return scale * self.seq.eigenvalues()
        if self.form is CovarianceForm.LAPLACE_GREEN:
            length = self.domain[1] - self.domain[0]
            j = np.arange(1, self.n + 1, dtype=float)
            return length**2 / (np.pi * j) ** 2
        raise ConfigError(f"{self.form.value} covariance has no explicit Mercer form")

    def mercer_basis(self, x):
        """Orthonormal eigenfunctions evaluated at ``x``, one row per eigenvalue."""
        x = self._check_in_domain(x)
        a, b = self.domain
        if self.form is CovarianceForm.JACOBI:
            t = np.clip(2.0 * (x - a) / (b - a) - 1.0, -1.0, 1.0)
            return jacobi_basis(self.seq.n - 1, self.alpha, t) * math.sqrt(2.0 / (b - a))
        if self.form is CovarianceForm.LAPLACE_GREEN:
            j = np.arange(1, self.n + 1, dtype=float)
            return math.sqrt(2.0 / (b - a)) * np.sin(np.pi * np.outer(j, (x - a) / (b - a)))
        raise ConfigError(f"{self.form.value} covariance has no explicit Mercer form")

    def _check_in_domain(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.domain
        slack = _DOMAIN_SLACK * max(1.0, abs(a), abs(b))
        if np.any(x < a - slack) or np.any(x > b + slack):
            raise ConfigError(f"evaluation point outside covariance domain [{a}, {b}]")
        return x

    def to_dict(self):
        out = {"form": self.form.value, "domain": list(self.domain)}
        if self.ell is not None:
            out["ell"] = self.ell
        if self.form is CovarianceForm.JACOBI:
            out["alpha"] = self.alpha
            out["seq"] = self.seq.to_dict()
        if self.form is CovarianceForm.LAPLACE_GREEN:
            out["n"] = self.n
        if self.form is CovarianceForm.MATRIX:
            out["matrix"] = self.matrix.tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict) or "form" not in d:
            raise ConfigError(f"malformed covariance spec {d!r}")
        seq = d.get("seq")
        if seq is not None:
            seq = EigenSequence.from_dict(seq)
        domain = tuple(d.get("domain", (0.0, 1.0) if d["form"] == "laplace_green" else (-1.0, 1.0)))
        if len(domain) != 2:
            raise ConfigError("domain must be [a, b]")
        matrix = d.get("matrix")
        return cls(
            d["form"],
            domain=domain,
            ell=d.get("ell"),
            alpha=d.get("alpha"),
            seq=seq,
            n=d.get("n"),
            matrix=None if matrix is None else np.asarray(matrix, dtype=float),
        )


def kernel_eval(spec, x, y):
    """Evaluate a closed-form kernel (squared-exponential or periodic) at ``(x, y)``."""
    if not spec.is_closed_form:
        raise ConfigError(f"kernel_eval needs a closed-form kernel, got {spec.form.value}")
    x = spec._check_in_domain(x)
    y = spec._check_in_domain(y)
    d = x - y
    if spec.form is CovarianceForm.SQEXP:
        out = np.exp(-(d * d) / (2.0 * spec.ell**2))
    else:
        out = np.exp(-(2.0 / spec.ell**2) * np.sin(0.5 * d) ** 2)
    return out if np.ndim(out) else float(out)


def _nodes_of(grid):
    if isinstance(grid, QuadratureGrid):
        return grid.nodes
    return np.asarray(grid, dtype=float)


def discretize_covariance(spec, grid, check=True, psd_tol=1e-10):
    """Pointwise covariance matrix ``K[i, k] = K(x_i, x_k)`` on the grid nodes.

    Mercer-form kernels are assembled as ``Phi.T @ diag(lambda) @ Phi``. The
    result is exactly symmetric. With ``check=True`` the weighted spectrum is
    inspected and eigenvalues below ``-psd_tol * lambda_max`` are logged.
    """
    if spec.form is CovarianceForm.MATRIX:
        K = np.array(spec.matrix, copy=True)
        if grid is not None and _nodes_of(grid).size != K.shape[0]:
            raise ConfigError("grid size does not match the explicit covariance matrix")
        return K
    x = _nodes_of(grid)
    spec._check_in_domain(x)
    if spec.is_closed_form:
        K = kernel_eval(spec, x[:, None], x[None, :])
    else:
        Phi = spec.mercer_basis(x)
        K = (Phi.T * spec.mercer_eigenvalues()) @ Phi
    K = 0.5 * (K + K.T)
    if check:
        w = grid.weights if isinstance(grid, QuadratureGrid) else np.ones(x.size)
        ev = np.linalg.eigvalsh(weighted_similarity(K, w))
        if ev[0] < -psd_tol * ev[-1]:
            logger.warning(
                "discretized %s covariance has eigenvalue %.3e (max %.3e)",
                spec.form.value, ev[0], ev[-1],
            )
    return K


def covariance_numerical_rank(K, grid=None, relative_tol=2.0**-52, method="eig"):
    """Numerical rank of a discretized covariance.

    ``method="eig"`` counts eigenvalues of the weighted eigenproblem
    ``W^(1/2) K W^(1/2)`` exceeding ``relative_tol * lambda_1`` (uniform
    weights when ``grid`` is None). ``method="aca"`` runs complete-pivoting
    cross approximation on the sampled kernel with the scaled tolerance of
    :func:`gsketch._linalg.aca_tolerance`, using ``relative_tol`` as the
    base precision; this is the rank notion adaptive function-approximation
    tools report.
    """
    K = check_square_symmetric(K)
    if not 0.0 < relative_tol < 1.0:
        raise ConfigError("relative_tol must lie in (0, 1)")
    if method == "eig":
        w = grid.weights if isinstance(grid, QuadratureGrid) else np.ones(K.shape[0])
        ev = np.linalg.eigvalsh(weighted_similarity(K, w))
        return int(np.sum(ev > relative_tol * ev[-1]))
    if method == "aca":
        if grid is None:
            raise ConfigError("method='aca' needs the grid nodes")
        x = _nodes_of(grid)
        return aca_rank(K, aca_tolerance(K, x, x, eps=relative_tol))
    raise ConfigError(f"unknown rank method {method!r}")
