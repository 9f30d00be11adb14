import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stenokernel.kernels import (InterpolantModel, KernelConfig, KernelFactorizationError,
                                 ModelFormatError, factorize, fit_interpolant, kernel_eval, kernel_gradient,
                                 kernel_matrix, native_norm_sq, reg_grid, shape_grid)

GAUSS = KernelConfig("gaussian", 2.0)
WEND = KernelConfig("wendland", 3.0)


def test_gaussian_values():
    assert kernel_eval(0.3, 0.3, GAUSS) == 1.0
    assert kernel_eval(0.0, 0.5, GAUSS) == pytest.approx(math.exp(-1.0), rel=1e-15)


def test_wendland_compact_support_and_peak():
    assert kernel_eval(0.2, 0.2, WEND) == 1.0
    for r in (1 / 3, 0.4, 2.0):
        assert kernel_eval(0.0, r, WEND) == 0.0
    assert kernel_eval(0.0, 0.3, WEND) > 0.0


@pytest.mark.parametrize("k", [0, 1, 2])
def test_wendland_positive_definite(k):
    kc = KernelConfig("wendland", 4.0, smoothness=k)
    A = kernel_matrix(np.linspace(0, 1, 12), np.linspace(0, 1, 12), kc)
    assert np.linalg.eigvalsh(A).min() > 0


def test_gradient_zero_at_support_boundary_for_smooth_wendland():
    g = kernel_gradient(np.array([1 / 3 - 1e-9]), np.array([0.0]), WEND)
    assert abs(g[0, 0, 0]) < 1e-12


def test_wendland_order_zero_is_not_differentiable():
    kc = KernelConfig("wendland", 3.0, smoothness=0)
    with pytest.raises(ValueError):
        kernel_gradient(np.array([0.1]), np.array([0.0]), kc)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-3, 3), y=st.floats(-3, 3), eps=st.floats(0.01, 50),
       fam=st.sampled_from(["gaussian", "wendland"]))
def test_kernel_symmetry(x, y, eps, fam):
    kc = KernelConfig(fam, eps)
    assert kernel_eval(x, y, kc) == kernel_eval(y, x, kc)


def test_single_point_matrix():
    assert kernel_matrix([0.4], [0.4], GAUSS).tolist() == [[1.0]]


def test_coincident_points_fail_factorization():
    A = kernel_matrix([0.5, 0.5], [0.5, 0.5], GAUSS)
    with pytest.raises(KernelFactorizationError, match="condition"):
        factorize(A)


def test_fit_retries_with_bumped_regularization():
    m = fit_interpolant([0.5, 0.5], [[1.0], [1.0]], GAUSS)
    assert m.kernel.reg == pytest.approx(1e-12)
    assert m.evaluate(0.5)[0] == pytest.approx(1.0, rel=1e-6)


def test_equispaced_gaussian_matrix_positive_eigenvalues():
    X = np.linspace(0, 1, 5)
    assert np.all(np.linalg.eigvalsh(kernel_matrix(X, X, GAUSS)) > 0)


def test_single_point_fit():
    m = fit_interpolant([0.3], [[2.0, -1.0]], GAUSS)
    assert np.array_equal(m.evaluate(0.3), [2.0, -1.0])
    x = 0.8
    assert m.evaluate(x) == pytest.approx(np.array([2.0, -1.0]) * kernel_eval(x, 0.3, GAUSS), rel=1e-14)


def smooth_data(n=40, q=7, seed=0):
    # jittered equispaced points keep the Gaussian matrix well conditioned
    rng = np.random.default_rng(seed)
    X = np.linspace(0, 1, n) + rng.uniform(-0.1, 0.1, n) / n
    F = np.stack([np.sin((j + 1) * X) + X ** 2 * j for j in range(q)], axis=1)
    return X, F


def test_interpolation_residual_at_nodes():
    X, F = smooth_data()
    m = fit_interpolant(X, F, KernelConfig("gaussian", 25.0))
    res = np.max(np.linalg.norm(m.evaluate(X) - F, axis=1))
    assert res < 1e-8 * np.max(np.linalg.norm(F, axis=1))


def test_regularization_shrinks_coefficients():
    X, F = smooth_data(20, 3)
    norms = [np.linalg.norm(fit_interpolant(X, F, KernelConfig("gaussian", 4.0, lam)).coefficients)
             for lam in (0.0, 1e-8, 1e-5, 1e-3, 1e-1)]
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_regularized_solution_is_representer_optimal():
    rng = np.random.default_rng(3)
    X, F = smooth_data(15, 1)
    lam = 1e-4
    m = fit_interpolant(X, F, KernelConfig("gaussian", 4.0, lam))
    A = kernel_matrix(X, X, m.kernel)

    def functional(a):
        r = A @ a - F[:, 0]
        return r @ r + lam * a @ A @ a

    best = functional(m.coefficients[:, 0])
    for _ in range(100):
        d = rng.normal(size=15) * 1e-3
        assert best <= functional(m.coefficients[:, 0] + d) + 1e-10


def test_empty_model_evaluates_to_zero():
    m = InterpolantModel(np.zeros((0, 1)), np.zeros((0, 4)), GAUSS, 4)
    assert np.array_equal(m.evaluate(0.2), np.zeros(4))
    assert np.array_equal(m.evaluate_derivative(0.2), np.zeros(4))


def test_evaluate_matches_naive_sum():
    X, F = smooth_data(10, 3)
    m = fit_interpolant(X, F, KernelConfig("gaussian", 8.0))
    for x in (0.05, 0.33, 0.9):
        naive = np.zeros(3)
        for j in range(m.n_centers):
            naive += m.coefficients[j] * math.exp(-(m.kernel.epsilon * (x - m.centers[j, 0])) ** 2)
        assert np.allclose(m.evaluate(x), naive, rtol=0, atol=1e-14 * max(1, np.abs(m.coefficients).sum()))


def test_batch_and_single_evaluation_agree():
    X, F = smooth_data(10, 3)
    m = fit_interpolant(X, F, GAUSS)
    grid = np.linspace(0, 1, 7)
    batch = m.evaluate(grid)
    assert batch.shape == (7, 3)
    scale = np.abs(m.coefficients).sum()
    for i, x in enumerate(grid):
        assert np.allclose(m.evaluate(x), batch[i], rtol=0, atol=1e-14 * scale)


def test_derivative_zero_on_symmetry_axis():
    X = np.array([-0.5, -0.2, 0.2, 0.5])
    F = np.array([[1.0], [3.0], [3.0], [1.0]])
    m = fit_interpolant(X, F, GAUSS)
    assert abs(m.evaluate_derivative(0.0)[0]) < 1e-12


def test_single_term_derivative_sign():
    m = fit_interpolant([0.0], [[1.0]], GAUSS)
    assert m.evaluate_derivative(0.1)[0] < 0 < m.evaluate_derivative(-0.1)[0]
    x = 0.1
    assert m.evaluate_derivative(x)[0] == pytest.approx(-2 * GAUSS.epsilon ** 2 * x * math.exp(-(GAUSS.epsilon * x) ** 2))


@pytest.mark.parametrize("kc", [KernelConfig("gaussian", 3.0), KernelConfig("wendland", 1.5),
                                KernelConfig("wendland", 1.5, smoothness=2)])
def test_derivative_matches_finite_differences(kc):
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(100):
        X = np.sort(rng.uniform(0, 1, 8))[:, None]
        m = InterpolantModel(X, rng.normal(size=(8, 2)), kc, 2)
        x = rng.uniform(0.05, 0.95)
        fd = (m.evaluate(x + h) - m.evaluate(x - h)) / (2 * h)
        an = m.evaluate_derivative(x)
        assert np.max(np.abs(an - fd)) <= 1e-5 * max(1.0, np.max(np.abs(an)))


def test_native_norm_matches_quadratic_form():
    X, F = smooth_data(8, 2)
    kc = KernelConfig("gaussian", 8.0)
    m = fit_interpolant(X, F, kc)
    A = kernel_matrix(X, X, kc)
    expected = sum(m.coefficients[:, j] @ A @ m.coefficients[:, j] for j in range(2))
    assert native_norm_sq(m) == pytest.approx(expected, rel=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        fit_interpolant([0.1, 0.2], [[1.0]], GAUSS)


def test_invalid_config():
    with pytest.raises(ValueError):
        KernelConfig("cauchy", 1.0)
    with pytest.raises(ValueError):
        KernelConfig("gaussian", 0.0)
    with pytest.raises(ValueError):
        KernelConfig("gaussian", 1.0, -1e-3)


def test_model_round_trip_is_bit_exact(tmp_path):
    X, F = smooth_data(12, 5)
    m = fit_interpolant(X, F, KernelConfig("wendland", 2.0, 1e-9, 2))
    m = InterpolantModel(m.centers, m.coefficients, m.kernel, m.output_dim, {"label": "p56"})
    path = tmp_path / "m.json"
    m.save(path)
    r = InterpolantModel.load(path)
    assert np.array_equal(r.centers, m.centers) and np.array_equal(r.coefficients, m.coefficients)
    assert r.kernel == m.kernel and r.metadata == {"label": "p56"}
    assert path.read_text() == r.to_json()


def test_model_format_errors():
    with pytest.raises(ModelFormatError):
        InterpolantModel.from_json("{")
    with pytest.raises(ModelFormatError):
        InterpolantModel.from_json('{"format": "other"}')
    m = fit_interpolant([0.1], [[1.0]], GAUSS)
    with pytest.raises(ModelFormatError, match="version"):
        InterpolantModel.from_json(m.to_json().replace('"version":1', '"version":99'))


def test_parameter_grids():
    e, r = shape_grid(), reg_grid()
    assert len(e) == 20 and e[0] == pytest.approx(1e-2) and e[-1] == pytest.approx(50.0)
    assert len(r) == 15 and r[0] == pytest.approx(1e-16) and r[-1] == pytest.approx(1e-2)
    assert np.allclose(np.diff(np.log(e)), np.log(e[1] / e[0]))
