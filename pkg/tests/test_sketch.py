import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.linalg import aslinearoperator

from gsketch import (
    BoundMode,
    ConfigError,
    NumericalError,
    QualityFactors,
    RandomSource,
    SketchConfig,
    beta_k,
    bound_rhs,
    failure_probability,
    gamma_k,
    generalized_rsvd,
    project_error,
    quality_factors,
    range_finder,
    svd_tail,
)
from gsketch.sketch import (
    beta_k_upper_bound,
    gamma_k_lower_bound,
    mc_expectation_identity,
    mc_tail_bound,
    orthonormal_basis,
    split_singular_space,
    tail_bound,
)


def _random_psd(gen, n, floor=1e-3):
    Q, _ = np.linalg.qr(gen.standard_normal((n, n)))
    lam = np.sort(gen.uniform(floor, 1.0, n))[::-1]
    K = (Q * lam) @ Q.T
    return 0.5 * (K + K.T), lam


# ---------------------------------------------------------------- range finder


def test_range_identity_e1():
    Q = range_finder(np.eye(4), np.eye(4)[:, :1])
    assert Q.shape == (4, 1) and abs(abs(Q[0, 0]) - 1) < 1e-15


def test_range_rank_one(gen):
    u, v = gen.standard_normal(12), gen.standard_normal(9)
    A = np.outer(u, v)
    Q = range_finder(A, gen.standard_normal((9, 4)))
    assert Q.shape[1] == 1
    assert abs(abs(Q[:, 0] @ u) / np.linalg.norm(u) - 1) <= 1e-10


def test_range_orthonormal(gen):
    A = gen.standard_normal((50, 40))
    Q = range_finder(A, gen.standard_normal((40, 20)))
    np.testing.assert_allclose(Q.T @ Q, np.eye(20), atol=1e-10)


def test_zero_sketch_gives_empty_range():
    Q = range_finder(np.zeros((6, 5)), np.ones((5, 3)))
    assert Q.shape == (6, 0)


def test_range_finder_accepts_operators_and_callables(gen):
    A = gen.standard_normal((15, 10))
    omega = gen.standard_normal((10, 4))
    Q1 = range_finder(A, omega)
    Q2 = range_finder(aslinearoperator(A), omega)
    Q3 = range_finder(lambda X: A @ X, omega)
    np.testing.assert_allclose(np.abs(Q1), np.abs(Q2), atol=1e-12)
    np.testing.assert_allclose(np.abs(Q1), np.abs(Q3), atol=1e-12)


def test_pivot_drops_dependent_columns(gen):
    Y = gen.standard_normal((20, 3))
    Y = np.hstack([Y, Y[:, :1] + Y[:, 1:2]])
    assert orthonormal_basis(Y).shape[1] == 3


# ---------------------------------------------------------------- errors


def test_project_error_cases():
    A = np.diag([3.0, 2.0, 1.0])
    assert project_error(A, np.eye(3)[:, :2]) == pytest.approx(1.0)
    assert project_error(A, np.zeros((3, 0))) == pytest.approx(math.sqrt(14))
    assert project_error(A, np.eye(3)) <= 1e-10
    assert project_error(A, np.eye(3)[:, :2], relative=True) == pytest.approx(1 / math.sqrt(14))


def test_svd_tail_cases():
    s = [3.0, 2.0, 1.0]
    assert svd_tail(s, 3) == 0.0
    assert svd_tail(s, 1) == pytest.approx(math.sqrt(5))
    assert svd_tail(s, 0) == pytest.approx(math.sqrt(14))
    with pytest.raises(ConfigError):
        svd_tail(s, 4)


def test_nested_sketches_monotone_and_eckart_young(gen):
    A = gen.standard_normal((30, 25)) * 0.8 ** np.arange(25)
    s = np.linalg.svd(A, compute_uv=False)
    omega = gen.standard_normal((25, 20))
    errs = []
    for j in range(1, 21):
        Q = range_finder(A, omega[:, :j])
        errs.append(project_error(A, Q))
        assert errs[-1] >= svd_tail(s, Q.shape[1]) - 1e-10 * np.linalg.norm(A)
    assert np.all(np.diff(errs) <= 1e-12)


# ---------------------------------------------------------------- quality factors


def test_identity_quality(gen):
    A = gen.standard_normal((20, 20))
    qf = quality_factors(A, np.eye(20), 5)
    assert abs(qf.gamma_k - 1) <= 1e-12 and abs(qf.beta_k - 1) <= 1e-12


def test_gamma_diagonal_closed_form():
    lam = np.array([2.0, 1.5, 1.0, 0.5, 0.25])
    V1 = np.eye(5)[:, :3]
    assert gamma_k(np.diag(lam), V1) == pytest.approx(3 / (2.0 * (1 / 2 + 1 / 1.5 + 1 / 1)), rel=1e-14)


def test_gamma_singular_gram_is_error():
    K = np.diag([1.0, 1.0, 0.0, 0.0])
    with pytest.raises(NumericalError, match="blind"):
        gamma_k(K, np.eye(4)[:, 2:])


def test_beta_zero_for_leading_subspace_prior(gen):
    A = gen.standard_normal((12, 12))
    _, V1, V2, s2 = split_singular_space(A, 4)
    assert beta_k(V1 @ V1.T, V2, s2) == pytest.approx(0.0, abs=1e-14)


def test_beta_zero_for_exact_low_rank(gen):
    A = gen.standard_normal((10, 3)) @ gen.standard_normal((3, 10))
    qf = quality_factors(A, np.eye(10), 3)
    assert qf.exact_low_rank and qf.beta_k == 0.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(4, 30), k=st.integers(1, 3))
def test_quality_ranges_and_bounds(seed, n, k):
    gen = np.random.default_rng(seed)
    A = gen.standard_normal((n, n))
    K, lam = _random_psd(gen, n)
    sigma, V1, V2, s2 = split_singular_space(A, k)
    g, b = gamma_k(K, V1), beta_k(K, V2, s2)
    assert 0 < g <= 1 + 1e-12
    assert 0 <= b <= 1 + 1e-12
    assert g >= gamma_k_lower_bound(lam, k) * (1 - 1e-12)
    assert b <= beta_k_upper_bound(lam, sigma, k) + 1e-12


# ---------------------------------------------------------------- bounds


def test_bound_rhs_arithmetic():
    qf = QualityFactors(1.0, 1.0, 1.0)
    assert bound_rhs(SketchConfig(10, 5), qf, 1.0) == pytest.approx(1 + math.sqrt(75))
    assert bound_rhs(SketchConfig(10, 5), QualityFactors(0.5, 0.0, 1.0), 2.5) == 2.5


def test_bound_rhs_standard():
    cfg = SketchConfig(10, 5, t=2.0, u=3.0)
    want = (1 + 2 * math.sqrt(30 / 6)) * 1.0 + 3 * 2 * math.sqrt(15) / 6 * 0.1
    assert bound_rhs(cfg, tail=1.0, mode=BoundMode.STANDARD_HMT, sigma_k1=0.1) == pytest.approx(want)
    with pytest.raises(ConfigError):
        bound_rhs(cfg, tail=1.0, mode="standard_hmt")


@settings(max_examples=40, deadline=None)
@given(r=st.floats(0, 10), t=st.floats(1, 5), u=st.floats(1, 5), dr=st.floats(0, 1), dt=st.floats(0, 1))
def test_bound_rhs_monotone(r, t, u, dr, dt):
    base = bound_rhs(SketchConfig(5, 5, t, u), QualityFactors(1.0, r, 1.0), 1.0)
    assert bound_rhs(SketchConfig(5, 5, t, u), QualityFactors(1.0, r + dr, 1.0), 1.0) >= base
    assert bound_rhs(SketchConfig(5, 5, t + dt, u), QualityFactors(1.0, r, 1.0), 1.0) >= base
    assert bound_rhs(SketchConfig(5, 5, t, u + dt), QualityFactors(1.0, r, 1.0), 1.0) >= base


def test_bound_needs_oversampling_four():
    with pytest.raises(ConfigError):
        bound_rhs(SketchConfig(5, 3), QualityFactors(1, 1, 1), 1.0)


def test_config_validation():
    for bad in (dict(k=0), dict(k=3, p=-1), dict(k=3, t=0.5), dict(k=3, u=0.9)):
        with pytest.raises(ConfigError):
            SketchConfig(**bad)


def test_failure_probability():
    assert failure_probability(SketchConfig(10, 5, t=4, u=3)) <= 1e-3
    assert failure_probability(SketchConfig(10, 5, t=1e6, u=3)) == pytest.approx((3 * math.exp(-4)) ** 15, rel=1e-6)
    assert failure_probability(SketchConfig(10, 5, t=2, u=1)) == pytest.approx(2**-5 + 1)
    assert failure_probability(SketchConfig(10, 5, t=2, u=1), "standard_hmt") == pytest.approx(2 * 2**-5 + math.exp(-1))


def test_tail_bound_values():
    assert tail_bound(10, 0.0) == 1.0
    assert tail_bound(10, 3.0) == pytest.approx(4**5 * math.exp(-15))
    vals = [tail_bound(10, s) for s in np.linspace(0, 5, 30)]
    assert np.all(np.diff(vals) < 0)


# ---------------------------------------------------------------- Monte Carlo


def test_expectation_identity_trivial_cases(gen):
    n, k = 8, 3
    V2 = np.eye(n)[:, k:]
    est = mc_expectation_identity(np.ones(n - k), V2, np.eye(n), np.zeros((4, k)), 1000, RandomSource(1))
    assert est.empirical == 0.0 and est.analytic == 0.0
    est = mc_expectation_identity(np.ones(n - k), V2, np.eye(n), np.eye(k), 1000, RandomSource(1))
    assert est.analytic == pytest.approx((n - k) * k)


def test_expectation_identity_rate(gen):
    A = gen.standard_normal((15, 15))
    K, _ = _random_psd(gen, 15)
    _, _, V2, s2 = split_singular_space(A, 4)
    T = gen.standard_normal((6, 4))
    small = mc_expectation_identity(s2, V2, K, T, 2000, RandomSource(2))
    big = mc_expectation_identity(s2, V2, K, T, 8000, RandomSource(3))
    assert big.stderr / small.stderr == pytest.approx(0.5, rel=0.15)
    assert abs(big.empirical - big.analytic) <= 4 * big.stderr


def test_mc_results_independent_of_block_layout():
    n = 10
    V2 = np.eye(n)[:, 2:]
    s2 = np.linspace(1, 0.1, 8)
    a = mc_expectation_identity(s2, V2, np.eye(n), np.eye(2), 2500, RandomSource(4))
    b = mc_expectation_identity(s2, V2, np.eye(n), np.eye(2), 2500, RandomSource(4))
    assert a == b


def test_tail_bound_s_zero_vacuous():
    n = 10
    te = mc_tail_bound(np.ones(7), np.eye(n)[:, 3:], np.eye(n), 5, 0.0, 1000, RandomSource(5))
    assert te.bound == 1.0 and 0.0 <= te.rate <= 1.0


# ---------------------------------------------------------------- the sketch


def test_exact_low_rank_recovered(gen):
    A = gen.standard_normal((40, 6)) @ gen.standard_normal((6, 30))
    res = generalized_rsvd(A, None, SketchConfig(6, 2), RandomSource(0))
    assert res.error_fro <= 1e-10 * np.linalg.norm(A)


def test_diag_bound_holds_in_most_trials():
    A = np.diag(10.0 ** -np.arange(10))
    cfg = SketchConfig(5, 4, 1, 1)
    ok = sum(
        generalized_rsvd(A, np.eye(10), cfg, RandomSource(6).substream(i)).error_fro
        <= generalized_rsvd(A, np.eye(10), cfg, RandomSource(6).substream(i)).bound_rhs
        for i in range(1000)
    )
    assert ok >= 990


def test_leading_subspace_prior_near_optimal(gen):
    A = gen.standard_normal((30, 30)) * 0.7 ** np.arange(30)
    U, s, Vt = np.linalg.svd(A)
    K = Vt[:5].T @ Vt[:5] + 1e-8 * np.eye(30)
    res = generalized_rsvd(A, K, SketchConfig(5, 0), RandomSource(7))
    assert res.error_fro <= 10 * svd_tail(s, 5)
    assert res.quality.beta_k < 1e-6


def test_generalized_rsvd_errors(gen):
    A = gen.standard_normal((10, 8))
    with pytest.raises(ConfigError):
        generalized_rsvd(A, np.eye(7), SketchConfig(2), RandomSource(0))
    with pytest.raises(ConfigError):
        generalized_rsvd(A, None, SketchConfig(6, 5), RandomSource(0))
    with pytest.raises(NumericalError):
        generalized_rsvd(A, np.diag([1.0] * 7 + [-1.0]), SketchConfig(2), RandomSource(0))


def test_linear_operator_input(gen):
    A = gen.standard_normal((20, 15))
    r1 = generalized_rsvd(A, None, SketchConfig(4), RandomSource(3))
    r2 = generalized_rsvd(aslinearoperator(A), None, SketchConfig(4), RandomSource(3))
    assert r1.error_fro == pytest.approx(r2.error_fro, rel=1e-10)
    r3 = generalized_rsvd(aslinearoperator(A), None, SketchConfig(4), RandomSource(3), dense_limit=5)
    assert r3.error_fro is None and r3.factors.rank == 9


def test_result_json(gen):
    res = generalized_rsvd(gen.standard_normal((12, 12)), None, SketchConfig(3, 4), RandomSource(12))
    d = json.loads(res.to_json())
    assert set(d) == {"k", "p", "error_fro", "error_rel", "tail", "gamma_k", "beta_k", "bound_rhs", "seed"}
    assert d["seed"] == 12 and d["gamma_k"] == pytest.approx(1.0)
    np.testing.assert_allclose(res.factors.Q.T @ res.factors.Q, np.eye(7), atol=1e-10)
