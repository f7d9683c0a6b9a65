"""Reproducible numerical experiments behind the ``gsketch`` command line.

Each ``run_*`` function takes a resolved :class:`ExperimentConfig` and
returns plain rows (lists of dicts) or a JSON-ready report, so the same
code serves the CLI, the tests and interactive use.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_int, check_real
from .covariance import CovarianceSpec, EigenSequence, discretize_covariance, jacobi_kernel_eval
from .exceptions import ConfigError
from .hsop import (
    BUILTIN_KERNELS,
    DEFAULT_GRID_SIZE,
    build_kernel,
    best_error_tail,
    hs_randomized_svd,
    l2_error,
    learn_from_samples,
)
from .quadrature import make_grid
from .sampling import RandomSource, factor_covariance, sample_gp_function, draw_mvn_matrix
from .sketch import (
    BoundMode,
    QualityFactors,
    SketchConfig,
    beta_k,
    beta_k_upper_bound,
    bound_rhs,
    failure_probability,
    gamma_k,
    gamma_k_lower_bound,
    mc_expectation_identity,
    mc_tail_bound,
    orthonormal_basis,
    project_error,
    split_singular_space,
)

COMMANDS = ("matrix-prior", "hs-convergence", "gp-samples", "bound-check", "kernel-learn")
EPS = np.finfo(float).eps


@dataclass
class ExperimentConfig:
    """Resolved parameters of one command; ``None`` means the command's default."""

    command: str
    seed: int = 1
    trials: int | None = None
    out: str | None = None
    n: int | None = None
    k_max: int | None = None
    p: int | None = None
    ell: float | None = None
    nu: float | None = None
    kernel: str | None = None
    cov: str | None = None
    extra: dict = field(default_factory=dict)

    FIELDS = ("seed", "trials", "out", "n", "k_max", "p", "ell", "nu", "kernel", "cov")

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; choose from {', '.join(COMMANDS)}")
        if self.seed is None:
            raise ConfigError("a seed is required")
        self.seed = check_int(self.seed, "seed", minimum=0)
        for name in ("trials", "n", "k_max", "p"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, check_int(v, name, minimum=0 if name == "p" else 1))
        for name in ("ell", "nu"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, check_real(v, name, minimum=0.0, strict=True))

    @classmethod
    def merge(cls, command, file_values=None, flag_values=None):
        """Combine JSON-config values with command-line flags; flags win when set."""
        merged = {}
        extra = {}
        for source in (file_values or {}, flag_values or {}):
            for key, value in source.items():
                key = key.replace("-", "_")
                if value is None:
                    continue
                if key == "command":
                    continue
                if key in cls.FIELDS:
                    merged[key] = value
                else:
                    extra[key] = value
        return cls(command=command, extra=extra, **merged)

    def get(self, name, default):
        value = getattr(self, name) if name in self.FIELDS else self.extra.get(name)
        return default if value is None else value

    def resolved(self, **defaults):
        """Dict of every parameter with defaults filled in (embedded in outputs)."""
        d = {k: v for k, v in asdict(self).items() if k != "extra"}
        d.update(self.extra)
        for key, value in defaults.items():
            if d.get(key) is None:
                d[key] = value
        return d


def _stream(cfg):
    return RandomSource(cfg.seed)


# --------------------------------------------------------------------------
# covariance names
# --------------------------------------------------------------------------

HS_DEFAULT_COVARIANCES = ("sqexp:0.01", "sqexp:0.1", "sqexp:1", "jacobi:3")


def parse_covariance(token, domain=(-1.0, 1.0), truncation=500):
    """``sqexp:ELL``, ``periodic:ELL``, ``jacobi:NU`` or ``jacobi:rissanen`` / ``jacobi:scaled-rissanen``."""
    name, _, arg = token.partition(":")
    try:
        if name == "sqexp":
            return CovarianceSpec.sqexp(ell=float(arg or 0.01), domain=domain)
        if name == "periodic":
            return CovarianceSpec.periodic(ell=float(arg or 0.1), domain=domain)
        if name == "jacobi":
            if arg == "rissanen":
                seq = EigenSequence.rissanen(n=truncation)
            elif arg == "scaled-rissanen":
                seq = EigenSequence.scaled_rissanen(n=truncation)
            else:
                seq = EigenSequence.power_law(float(arg or 3), n=truncation)
            return CovarianceSpec.jacobi(seq=seq, alpha=2, domain=domain)
    except ValueError as exc:
        raise ConfigError(f"bad covariance {token!r}: {exc}") from exc
    raise ConfigError(f"unknown covariance {token!r}; use sqexp:ELL, periodic:ELL or jacobi:NU")


def covariance_tokens(cfg):
    """Covariance list for the kernel commands: ``--cov`` (comma separated) or the defaults.

    ``--cov sqexp`` / ``--cov jacobi`` without a parameter take ``--ell`` / ``--nu``.
    """
    if cfg.cov in (None, "all"):
        tokens = list(HS_DEFAULT_COVARIANCES)
    else:
        tokens = [t.strip() for t in str(cfg.cov).split(",") if t.strip()]
    if not tokens:
        raise ConfigError("covariance list is empty")
    out = []
    for t in tokens:
        if t in ("sqexp", "periodic"):
            t = f"{t}:{cfg.get('ell', 0.01 if t == 'sqexp' else 0.1)}"
        elif t == "jacobi":
            t = f"jacobi:{cfg.get('nu', 3.0)}"
        out.append(t)
    return out


# --------------------------------------------------------------------------
# matrix experiment
# --------------------------------------------------------------------------


def schrodinger_inverse(n):
    """Inverse of the central-difference ``u'' - 100 sin(5 pi x) u`` on [0, 1], Dirichlet.

    Returns ``(A, x)`` with interior nodes ``x_i = i / (n + 1)``.
    """
    n = check_int(n, "n", minimum=3)
    if n < 50:
        raise ConfigError("n must be >= 50 to resolve sin(5 pi x)")
    h = 1.0 / (n + 1)
    x = h * np.arange(1, n + 1)
    L = (np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)) / h**2
    L -= np.diag(100.0 * np.sin(5.0 * np.pi * x))
    return np.linalg.inv(L), x


def sample_sweep(n, points=20):
    """Log-spaced integer sample counts from 1 to ``n`` (both included)."""
    return [int(v) for v in np.unique(np.round(np.geomspace(1, n, points)).astype(int))]


def run_matrix_prior(cfg):
    """Error / best-error ratios for identity and Laplacian-Green covariances."""
    n = cfg.get("n", 500)
    trials = cfg.get("trials", 10)
    if n < 100:
        raise ConfigError("matrix-prior needs n >= 100")
    A, x = schrodinger_inverse(n)
    sigma = np.linalg.svd(A, compute_uv=False)
    normA = float(np.linalg.norm(A))
    floor = n * EPS * normA  # round-off level of a full-range projection
    prior = factor_covariance(discretize_covariance(CovarianceSpec.laplace_green(n=n), x, check=False))
    root = prior.root
    source = _stream(cfg)
    rows = []
    for i, m in enumerate(sample_sweep(n, cfg.get("points", 20))):
        tail = float(np.sqrt(np.sum(sigma[m:] ** 2)))
        ratios = {"identity": [], "prior": []}
        for t in range(trials):
            G = source.substream(i).substream(t).standard_normal((n, m))
            for name, omega in (("identity", G), ("prior", root @ G[: prior.rank])):
                Q = orthonormal_basis(A @ omega)
                err = project_error(A, Q)
                ratios[name].append(max(err, floor) / max(tail, floor))
        rows.append({
            "samples": m,
            "mean_ratio_identity": float(np.mean(ratios["identity"])),
            "std_identity": float(np.std(ratios["identity"])),
            "mean_ratio_prior": float(np.mean(ratios["prior"])),
            "std_prior": float(np.std(ratios["prior"])),
        })
    return rows


# --------------------------------------------------------------------------
# kernel experiments
# --------------------------------------------------------------------------


def resolve_kernel(cfg):
    name = cfg.get("kernel", "bessel")
    if name in BUILTIN_KERNELS:
        grid = make_grid(cfg.get("family", "chebcc"), cfg.get("n", DEFAULT_GRID_SIZE[name]))
        return build_kernel(name, grid)
    if cfg.n is not None:
        raise ConfigError("--n does not apply to tabulated kernels")
    return build_kernel(name)


def run_hs_convergence(cfg):
    """Mean/std relative L2 error for ``k = 0..k_max`` per covariance, with the best-error tail."""
    kernel = resolve_kernel(cfg)
    k_max = cfg.get("k_max", 100)
    trials = cfg.get("trials", 10)
    if k_max > kernel.grid_y.size:
        raise ConfigError(f"k_max {k_max} exceeds the grid size {kernel.grid_y.size}")
    tail = best_error_tail(kernel, relative=True)
    source = _stream(cfg)
    rows = []
    for c, token in enumerate(covariance_tokens(cfg)):
        spec = parse_covariance(token, domain=kernel.grid_y.interval)
        fac = factor_covariance(discretize_covariance(spec, kernel.grid_y, check=False))
        errors = np.ones((trials, k_max + 1))
        for t in range(trials):
            omega = draw_mvn_matrix(fac, source.substream(c).substream(t), k_max)
            # nested sketches: the first k columns of one draw
            for k in range(1, k_max + 1):
                errors[t, k] = l2_error(kernel, learn_from_samples(kernel, omega[:, :k]), relative=True)
        for k in range(k_max + 1):
            rows.append({
                "k": k,
                "covariance": token,
                "mean_rel_error": float(errors[:, k].mean()),
                "std_rel_error": float(errors[:, k].std()),
                "best_tail": float(tail[min(k, tail.size - 1)]),
            })
    return rows


def run_kernel_learn(cfg):
    """One learned kernel; returns ``(kernel, learned, summary)``."""
    kernel = resolve_kernel(cfg)
    tokens = covariance_tokens(cfg) if cfg.cov is not None else ["sqexp:0.01"]
    if len(tokens) != 1:
        raise ConfigError("kernel-learn takes exactly one covariance")
    spec = parse_covariance(tokens[0], domain=kernel.grid_y.interval)
    k = cfg.get("k_max", 100)
    learned = hs_randomized_svd(kernel, spec, k, _stream(cfg))
    summary = {
        "rank": learned.rank,
        "rel_error": l2_error(kernel, learned, relative=True),
        "k": k,
        "seed": cfg.seed,
    }
    return kernel, learned, summary


# --------------------------------------------------------------------------
# GP samples
# --------------------------------------------------------------------------

GP_SEQUENCES = {
    "powerlaw4": lambda n: EigenSequence.power_law(4.0, n=n),
    "powerlaw3": lambda n: EigenSequence.power_law(3.0, n=n),
    "scaled-rissanen": lambda n: EigenSequence.scaled_rissanen(n=n),
}
SLICE_POINTS = (-0.5, 0.0, 0.5)


def run_gp_samples(cfg):
    """Kernel slices ``K(x, y0)`` and GP draws for the (2,2) Jacobi covariances."""
    truncation = cfg.get("n", 500)
    count = check_int(cfg.get("count", 5), "count", minimum=1)
    points = check_int(cfg.get("points", 401), "points", minimum=2)
    names = cfg.get("sequences", list(GP_SEQUENCES))
    if isinstance(names, str):
        names = [s.strip() for s in names.split(",")]
    x = np.linspace(-1.0, 1.0, points)
    grid = make_grid("trapezoid", points)
    source = _stream(cfg)
    rows = []
    for s, name in enumerate(names):
        if name not in GP_SEQUENCES:
            raise ConfigError(f"unknown sequence {name!r}; choose from {', '.join(GP_SEQUENCES)}")
        spec = CovarianceSpec.jacobi(seq=GP_SEQUENCES[name](truncation), alpha=2)
        for y0 in SLICE_POINTS:
            col = jacobi_kernel_eval(2, spec.seq, x, np.full_like(x, y0))
            rows.extend({"sequence": name, "series": f"kernel_y={y0:g}", "x": float(a), "value": float(v)}
                        for a, v in zip(x, col))
        for d in range(count):
            f = sample_gp_function(spec, grid, source.substream(s).substream(d))
            rows.extend({"sequence": name, "series": f"sample_{d}", "x": float(a), "value": float(v)}
                        for a, v in zip(x, f))
    return rows


def boundary_oscillation(samples, x, edge=0.95):
    """Mean over draws (columns) of ``max |f|`` restricted to ``|x| > edge``."""
    mask = np.abs(x) > edge
    return float(np.mean(np.max(np.abs(samples[mask]), axis=0)))


# --------------------------------------------------------------------------
# bound verification
# --------------------------------------------------------------------------


def _orthogonal(rng, n):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def geometric_instance(n, source):
    """``A = U diag(2^-j) V^T`` with Haar-random ``U, V``."""
    gen = source.generator()
    U, V = _orthogonal(gen, n), _orthogonal(gen, n)
    sigma = 2.0 ** -np.arange(1, n + 1, dtype=float)
    return (U * sigma) @ V.T


def power_law_covariance(n, nu=2.0):
    return np.diag(np.arange(1, n + 1, dtype=float) ** -nu)


def bound_violation_rate(A, K, cfg, trials, source):
    """Fraction of sketches with ``||A - QQ^T A||_F`` above the generalized bound."""
    _, V1, V2, sigma2 = split_singular_space(A, cfg.k)
    lam1 = float(np.linalg.eigvalsh(K)[-1])
    qf = QualityFactors(gamma_k(K, V1, lam1), beta_k(K, V2, sigma2, lam1), lam1)
    tail = float(np.sqrt(np.sum(sigma2**2)))
    rhs = bound_rhs(cfg, qf, tail)
    fac = factor_covariance(K)
    violations = 0
    for t in range(trials):
        omega = draw_mvn_matrix(fac, source.substream(t), cfg.ell)
        violations += project_error(A, orthonormal_basis(A @ omega)) > rhs
    return violations / trials, rhs, qf


def _check(name, empirical, bound, passed, **details):
    entry = {"check": name, "empirical": float(empirical), "bound": float(bound), "pass": bool(passed)}
    entry.update(details)
    return entry


def run_bound_check(cfg):
    """Monte-Carlo checks of the moment, tail and error bounds plus the gamma/beta inequalities."""
    n = cfg.get("n", 30)
    k = cfg.get("k_max", 5)
    p = cfg.get("p", 5)
    trials = cfg.get("trials", 1000)
    instances = check_int(cfg.get("instances", 100), "instances", minimum=1)
    if trials < 1000:
        raise ConfigError("bound-check needs trials >= 1000")
    if k + p > n:
        raise ConfigError(f"k + p = {k + p} exceeds n = {n}")
    root = _stream(cfg)
    A = geometric_instance(n, root.substream(0))
    K_pl = power_law_covariance(n)
    checks = []

    sk = SketchConfig(k, p)
    _, _, V2, sigma2 = split_singular_space(A, k)
    T = root.substream(1).standard_normal((sk.ell, k))
    est = mc_expectation_identity(sigma2, V2, K_pl, T, trials, root.substream(2))
    dev = abs(est.empirical - est.analytic)
    checks.append(_check("expectation_identity", est.empirical, est.analytic, dev <= 4.0 * est.stderr,
                         stderr=est.stderr, rule="|mean - analytic| <= 4 stderr"))

    for s in (1.0, 2.0, 3.0):
        te = mc_tail_bound(sigma2, V2, K_pl, sk.ell, s, trials, root.substream(3).substream(int(s)))
        checks.append(_check(f"tail_bound_s={s:g}", te.rate, te.bound, te.rate <= te.bound + 3.0 * te.stderr,
                             stderr=te.stderr, ell=sk.ell, rule="rate <= bound + 3 binomial stderr"))

    strict = SketchConfig(k, p, t=4.0, u=3.0)
    fp = failure_probability(strict, BoundMode.GENERALIZED)
    allowed = fp + 3.0 * math.sqrt(fp / trials)
    for c, (label, K) in enumerate((("identity", np.eye(n)), ("power_law", K_pl))):
        rate, rhs, qf = bound_violation_rate(A, K, strict, trials, root.substream(4).substream(c))
        checks.append(_check(f"error_bound_{label}", rate, allowed, rate <= allowed, bound_rhs=rhs,
                             gamma_k=qf.gamma_k, beta_k=qf.beta_k, failure_probability=fp,
                             rule="violation rate <= failure probability + 3 sqrt(fp/trials)"))

    _, V1, V2, sigma2 = split_singular_space(A, k)
    g_id, b_id = gamma_k(np.eye(n), V1), beta_k(np.eye(n), V2, sigma2)
    checks.append(_check("identity_quality", max(abs(g_id - 1), abs(b_id - 1)), 1e-12,
                         abs(g_id - 1) <= 1e-12 and abs(b_id - 1) <= 1e-12, gamma_k=g_id, beta_k=b_id))

    worst_g = worst_b = -np.inf
    for i in range(instances):
        src = root.substream(5).substream(i)
        gen = src.generator()
        m = int(gen.integers(k + 1, n + 1))
        Ai = gen.standard_normal((m, m)) * (0.7 ** np.arange(m))
        lam = np.sort(gen.uniform(0.01, 1.0, m))[::-1]
        P = _orthogonal(gen, m)
        Ki = (P * lam) @ P.T
        Ki = 0.5 * (Ki + Ki.T)
        sig, V1i, V2i, s2i = split_singular_space(Ai, k)
        lam1 = float(lam[0])
        g = gamma_k(Ki, V1i, lam1)
        worst_g = max(worst_g, gamma_k_lower_bound(lam, k) / g - 1.0)
        b = beta_k(Ki, V2i, s2i, lam1)
        worst_b = max(worst_b, b - beta_k_upper_bound(lam, sig, k))
    checks.append(_check("gamma_lower_bound", worst_g, 1e-12, worst_g <= 1e-12, instances=instances,
                         rule="max(gamma_lower / gamma - 1) <= 1e-12"))
    checks.append(_check("beta_upper_bound", worst_b, 1e-12, worst_b <= 1e-12, instances=instances,
                         rule="max(beta - sum lambda_{j-k} sigma_j^2 / (lambda_1 sum sigma_j^2)) <= 1e-12"))
    config = cfg.resolved(n=n, k_max=k, p=p, trials=trials, instances=instances)
    config.pop("out", None)  # the report must not depend on where it is written
    return {
        "config": config,
        "checks": checks,
        "all_pass": all(c["pass"] for c in checks),
    }
