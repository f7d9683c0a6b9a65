import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import j0

from gsketch import (
    ConfigError,
    CovarianceSpec,
    DiscretizedKernel,
    EigenSequence,
    RandomSource,
    apply_adjoint,
    apply_operator,
    discretize_covariance,
    bessel_j0,
    build_kernel,
    hs_randomized_svd,
    l2_error,
    make_grid,
    read_tabulated,
    weighted_qr,
    write_tabulated,
)
from gsketch.hsop import LearnedKernel, best_error_tail, learn_from_samples, operator_quality_factor
from gsketch.sampling import factor_covariance


def _separable(grid_x, grid_y, a, b):
    return DiscretizedKernel(grid_x, grid_y, np.outer(a(grid_x.nodes), b(grid_y.nodes)))


# ---------------------------------------------------------------- J0


def test_j0_at_zero():
    assert bessel_j0(0.0) == 1.0


def test_j0_even(gen):
    x = gen.uniform(0, 1e3, 100)
    np.testing.assert_array_equal(bessel_j0(-x), bessel_j0(x))


def test_j0_first_root_against_refined_quadrature():
    # bracket the root with the 10x-node oracle, then check the production rule there
    lo, hi = 2.3, 2.5
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if bessel_j0(mid, oversample=10) > 0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    assert root == pytest.approx(2.40482555769577, abs=1e-12)
    assert abs(bessel_j0(root)) <= 1e-10


def test_j0_accuracy_over_envelope():
    x = np.concatenate([np.linspace(0, 50, 2001), np.linspace(50, 1e4, 3001)])
    assert np.abs(bessel_j0(x) - j0(x)).max() <= 1e-12
    assert np.abs(bessel_j0(x) - bessel_j0(x, oversample=10)).max() <= 1e-12


def test_j0_envelope_enforced():
    with pytest.raises(ConfigError):
        bessel_j0(1.5e4)


# ---------------------------------------------------------------- kernels


def test_builtin_kernel_values():
    g = make_grid("chebcc", 21)
    c = build_kernel("cossin", g)
    assert c.values[10, 10] == 0.0  # node 10 is x = 0
    b = build_kernel("bessel", g)
    np.testing.assert_array_equal(b.values[:, 10], 1.0)


def test_unknown_builtin():
    with pytest.raises(ConfigError):
        build_kernel("airy", make_grid("chebcc", 10))
    with pytest.raises(ConfigError):
        build_kernel(42)


def test_cossin_rank_grid_converged():
    r1 = build_kernel("cossin", make_grid("chebcc", 400)).numerical_rank()
    r2 = build_kernel("cossin", make_grid("chebcc", 800)).numerical_rank()
    assert r1 == r2 == 4


def test_kernel_shape_validation():
    g = make_grid("chebcc", 5)
    with pytest.raises(ConfigError):
        DiscretizedKernel(g, g, np.ones((4, 5)))
    with pytest.raises(ConfigError):
        DiscretizedKernel(g, g, np.full((5, 5), np.nan))


# ---------------------------------------------------------------- operator actions


def test_apply_constant_kernel():
    g = make_grid("chebcc", 30)
    K = DiscretizedKernel(g, g, np.ones((30, 30)))
    np.testing.assert_allclose(apply_operator(K, np.ones(30)), 2.0, atol=1e-10)
    np.testing.assert_array_equal(apply_operator(K, np.zeros(30)), 0.0)
    np.testing.assert_array_equal(apply_adjoint(K, np.zeros(30)), 0.0)


def test_apply_separable():
    gx, gy = make_grid("chebcc", 40), make_grid("trapezoid", 500)
    K = _separable(gx, gy, np.cos, np.exp)
    f = np.sin(3 * gy.nodes)
    np.testing.assert_allclose(apply_operator(K, f), np.cos(gx.nodes) * gy.inner(np.exp(gy.nodes), f), atol=1e-10)


def test_symmetric_kernel_adjoint_equals_forward():
    g = make_grid("chebcc", 60)
    X, Y = np.meshgrid(g.nodes, g.nodes, indexing="ij")
    K = DiscretizedKernel(g, g, np.exp(-((X - Y) ** 2)))
    f = np.cos(4 * g.nodes)
    np.testing.assert_allclose(apply_adjoint(K, f), apply_operator(K, f), atol=1e-14)


def test_adjoint_identity_cossin():
    g = make_grid("chebcc", 200)
    K = build_kernel("cossin", g)
    src = RandomSource(4)
    worst = 0.0
    for i in range(50):
        f, q = src.substream(i).standard_normal((2, 200))
        worst = max(worst, abs(g.inner(apply_operator(K, f), q) - g.inner(f, apply_adjoint(K, q))))
    assert worst <= 1e-10


def test_length_mismatch():
    g = make_grid("chebcc", 10)
    K = DiscretizedKernel(g, make_grid("chebcc", 12), np.ones((10, 12)))
    with pytest.raises(ConfigError):
        apply_operator(K, np.ones(10))
    with pytest.raises(ConfigError):
        apply_adjoint(K, np.ones(12))


# ---------------------------------------------------------------- weighted QR


def test_weighted_qr_single_column():
    g = make_grid("chebcc", 50)
    f = np.exp(g.nodes)
    Q = weighted_qr(f, g.weights)
    np.testing.assert_allclose(np.abs(Q[:, 0]), f / g.norm(f), rtol=1e-13)


def test_weighted_qr_orthonormal_input_unchanged():
    g = make_grid("chebcc", 80)
    P = np.stack([np.ones(80) / math.sqrt(2), g.nodes * math.sqrt(1.5)], axis=1)
    Q = weighted_qr(P, g.weights)
    np.testing.assert_allclose(np.abs(Q), np.abs(P), atol=1e-13)


def test_weighted_qr_gram():
    g = make_grid("chebcc", 120)
    Y = np.stack([np.cos(j * g.nodes) + g.nodes**j for j in range(10)], axis=1)
    Q = weighted_qr(Y, g.weights)
    assert np.abs((Q.T * g.weights) @ Q - np.eye(Q.shape[1])).max() <= 1e-10


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), m=st.integers(1, 8))
def test_weighted_qr_preserves_span(seed, m):
    g = make_grid("chebcc", 40)
    Y = np.random.default_rng(seed).standard_normal((40, m))
    Q = weighted_qr(Y, g.weights)
    P = Q @ ((Q.T * g.weights) @ Y)
    np.testing.assert_allclose(P, Y, atol=1e-9 * np.abs(Y).max())


def test_weighted_qr_drops_dependent():
    g = make_grid("chebcc", 40)
    f = np.sin(g.nodes)
    assert weighted_qr(np.stack([f, 2 * f, f + 1e-15], axis=1), g.weights).shape[1] == 1
    assert weighted_qr(np.zeros((40, 2)), g.weights).shape[1] == 0


# ---------------------------------------------------------------- learning


def test_separable_rank_one_learned():
    g = make_grid("chebcc", 200)
    K = _separable(g, g, lambda x: np.exp(x), lambda y: np.cos(2 * y))
    L = hs_randomized_svd(K, CovarianceSpec.sqexp(0.1), 3, RandomSource(1))
    assert L.rank == 1
    assert l2_error(K, L, relative=True) <= 1e-10
    np.testing.assert_allclose((L.Q.T * g.weights) @ L.Q, np.eye(L.rank), atol=1e-10)


def test_cossin_machine_precision():
    K = build_kernel("cossin", make_grid("chebcc", 600))
    L = hs_randomized_svd(K, CovarianceSpec.sqexp(0.01), 100, RandomSource(2))
    assert l2_error(K, L, relative=True) <= 1e-11


def test_learned_apply_matches_dense():
    g = make_grid("chebcc", 100)
    K = build_kernel("cossin", g)
    L = hs_randomized_svd(K, CovarianceSpec.sqexp(0.1), 10, RandomSource(3))
    f = np.cos(g.nodes)
    np.testing.assert_allclose(L.apply(f), apply_operator(L.as_kernel(), f), atol=1e-12)


def test_factored_covariance_accepted_and_reproducible():
    g = make_grid("chebcc", 150)
    K = build_kernel("cossin", g)
    fac = factor_covariance(discretize_covariance(CovarianceSpec.sqexp(0.05), g))
    a = hs_randomized_svd(K, fac, 6, RandomSource(5))
    b = hs_randomized_svd(K, CovarianceSpec.sqexp(0.05), 6, RandomSource(5))
    np.testing.assert_allclose(a.values, b.values, atol=1e-12)


def test_covariance_grid_mismatch():
    K = build_kernel("cossin", make_grid("chebcc", 50))
    with pytest.raises(ConfigError):
        hs_randomized_svd(K, CovarianceSpec.sqexp(0.1, domain=(0.0, 1.0)), 5, RandomSource(0))


def test_zero_samples_gives_relative_error_one():
    K = build_kernel("cossin", make_grid("chebcc", 50))
    L = hs_randomized_svd(K, CovarianceSpec.sqexp(0.1), 0, RandomSource(0))
    assert L.rank == 0 and l2_error(K, L, relative=True) == pytest.approx(1.0)


def test_l2_error_cases():
    g = make_grid("chebcc", 50)
    K = build_kernel("cossin", g)
    zero = LearnedKernel(g, g, np.zeros((50, 0)), np.zeros((0, 50)))
    assert l2_error(K, zero) == pytest.approx(K.l2_norm())
    exact = LearnedKernel(g, g, np.eye(50), K.values)
    assert l2_error(K, exact) == 0.0
    other = LearnedKernel(g, g, np.ones((50, 1)), np.ones((1, 50)) * 0.1)
    brute = 0.0
    for i in range(50):
        for j in range(50):
            brute += g.weights[i] * g.weights[j] * (K.values[i, j] - 0.1) ** 2
    assert l2_error(K, other) == pytest.approx(math.sqrt(brute), rel=1e-13)
    with pytest.raises(ConfigError):
        l2_error(K, LearnedKernel(make_grid("chebcc", 50, (0, 1)), g, np.ones((50, 1)), np.ones((1, 50))))


def test_grid_convergence_of_learned_error():
    errs = []
    for n in (300, 600):
        K = build_kernel("cossin", make_grid("chebcc", n))
        errs.append(l2_error(K, hs_randomized_svd(K, CovarianceSpec.sqexp(0.05), 20, RandomSource(6))))
    assert abs(errs[0] - errs[1]) < 1e-10


def test_best_error_tail_shape():
    K = build_kernel("cossin", make_grid("chebcc", 100))
    t = best_error_tail(K)
    assert t[0] == 1.0 and t.size == 101 and np.all(np.diff(t) <= 1e-16)
    assert t[4] < 1e-13


def test_operator_quality_factor_variables():
    K = build_kernel("cossin", make_grid("chebcc", 60))
    g_x = operator_quality_factor(K, CovarianceSpec.sqexp(0.1), 3, variable="x")
    g_y = operator_quality_factor(K, CovarianceSpec.sqexp(0.1), 3, variable="y")
    assert 0 < g_x <= 1 and 0 < g_y <= 1
    Kt = K.transpose()
    assert operator_quality_factor(Kt, CovarianceSpec.sqexp(0.1), 3, variable="y") == pytest.approx(g_x, rel=1e-8)
    with pytest.raises(ConfigError):
        operator_quality_factor(K, CovarianceSpec.sqexp(0.1), 3, variable="z")


# ---------------------------------------------------------------- tabulated files


def test_tabulated_round_trip(tmp_path):
    g = make_grid("chebcc", 33)
    K = build_kernel("bessel", g)
    path = tmp_path / "k.csv"
    write_tabulated(path, K.values, g, g)
    again = build_kernel(path)
    np.testing.assert_array_equal(again.values, K.values)
    np.testing.assert_array_equal(again.grid_x.nodes, g.nodes)
    np.testing.assert_array_equal(again.grid_y.weights, g.weights)
    assert again.provenance[0] == "tabulated"
    assert path.read_text().splitlines()[2] == "# family: chebcc"


def test_tabulated_rectangular_trapezoid(tmp_path):
    gx, gy = make_grid("trapezoid", 7, (0, 1)), make_grid("trapezoid", 4, (0, 2))
    vals = np.arange(28.0).reshape(7, 4)
    write_tabulated(tmp_path / "r.csv", vals, gx, gy)
    K = read_tabulated(tmp_path / "r.csv")
    assert K.shape == (7, 4)
    np.testing.assert_allclose(K.grid_y.weights, gy.weights)


@pytest.mark.parametrize("text", [
    "",
    "# gridx: 0,1\n# gridy: 0,1\n# family: chebcc\n1,2\n",
    "# gridx: 0,1\n# gridy: 0,1\n# family: legendre\n1,2\n3,4\n",
    "# gridy: 0,1\n# gridx: 0,1\n# family: chebcc\n1,2\n3,4\n",
    "# gridx: 0,1\n# gridy: 0,1\n# family: chebcc\n1,x\n3,4\n",
    "# gridx: 0,0.3,1\n# gridy: 0,1\n# family: trapezoid\n1,2\n3,4\n5,6\n",
])
def test_malformed_tabulated(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ConfigError):
        build_kernel(p)


def test_tabulated_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        build_kernel(tmp_path / "missing.csv")


def test_nested_learning_matches_direct():
    g = make_grid("chebcc", 80)
    K = build_kernel("cossin", g)
    from gsketch.hsop import sample_input_functions

    omega = sample_input_functions(CovarianceSpec.jacobi(EigenSequence.power_law(3.0, n=100)), g, 8, RandomSource(9))
    a = learn_from_samples(K, omega)
    b = hs_randomized_svd(K, CovarianceSpec.jacobi(EigenSequence.power_law(3.0, n=100)), 8, RandomSource(9))
    np.testing.assert_allclose(a.values, b.values, atol=1e-13)


@pytest.fixture(scope="module")
def bessel_kernel():
    return build_kernel("bessel", make_grid("chebcc", 1000))


@pytest.mark.parametrize("cov", [CovarianceSpec.sqexp(0.01), CovarianceSpec.jacobi(EigenSequence.power_law(3.0))])
def test_median_error_decreases_as_k_doubles(bessel_kernel, cov):
    fac = factor_covariance(discretize_covariance(cov, bessel_kernel.grid_y))
    medians = []
    for k in (8, 16, 32, 64, 128):
        errs = [l2_error(bessel_kernel, hs_randomized_svd(bessel_kernel, fac, k, RandomSource(30).substream(s)), True)
                for s in range(10)]
        medians.append(np.median(errs))
    assert np.all(np.diff(medians) <= 0), medians


def test_bessel_learned_rank(bessel_kernel):
    L = hs_randomized_svd(bessel_kernel, CovarianceSpec.sqexp(0.01), 100, RandomSource(31))
    assert L.rank >= 85
    assert abs(bessel_kernel.numerical_rank() - 91) <= 2
