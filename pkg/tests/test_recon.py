import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import nnls

from upbre.errors import NumericalError
from upbre.geometry import GridSpec, ScanGeometry, make_geometry
from upbre.radon import Sinogram, radon_operator
from upbre.recon import (
    FistaConfig,
    TvProblem,
    fista_tv,
    grad_adjoint,
    grad_op,
    objective,
    reconstruct,
    tikhonov_solve,
    tv,
    tv_prox,
)

from oracles import tv_cvx_oracle


@pytest.fixture(scope="module")
def small_problem():
    rng = np.random.default_rng(0)
    g = make_geometry(6, 8)
    R = radon_operator(g, GridSpec(4))
    y = R(rng.random(16)) + 0.05 * rng.standard_normal(g.n_rays)
    return R, y


def test_tv_examples():
    assert tv(np.zeros((3, 3))) == 0.0
    assert tv(np.array([[2.5]])) == pytest.approx(2.5 * math.sqrt(2))
    assert tv(np.ones((2, 2))) == pytest.approx(math.sqrt(2) + 2)
    assert tv(np.ones(4)) == pytest.approx(math.sqrt(2) + 2)


@given(st.integers(1, 9), st.integers(0, 2**31))
def test_gradient_adjoint(n, seed):
    rng = np.random.default_rng(seed)
    x, p = rng.standard_normal((n, n)), rng.standard_normal((2, n, n))
    assert np.sum(grad_op(x) * p) == pytest.approx(np.sum(x * grad_adjoint(p)), abs=1e-12 * n * n)


def test_config_validation():
    for kw in ({"max_iters": 0}, {"inner_tv_iters": 0}, {"rel_tol": 0.0}, {"step": -1.0}):
        with pytest.raises(ValueError):
            FistaConfig(**kw)
    with pytest.raises(ValueError):
        TvProblem(Sinogram(np.zeros(2), make_geometry(1, 2)), GridSpec(1), -1.0)


def test_scalar_problem():
    g = ScanGeometry(np.array([0.0]), np.array([0.0]))
    for c in (0.3, 1.0, 7.5):
        p = TvProblem(Sinogram(np.array([2 * c]), g), GridSpec(1), 0.0)
        assert reconstruct(p)[0] == pytest.approx(c, abs=1e-6)


def test_huge_gamma_gives_zero(small_problem):
    R, y = small_problem
    x, info = fista_tv(R, y, 1e6)
    assert np.max(np.abs(x)) < 1e-6
    assert info.objective <= 0.5 * y @ y


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 2.0))
def test_output_nonnegative_and_no_worse_than_zero(seed, gamma):
    rng = np.random.default_rng(seed)
    g = make_geometry(5, 6)
    R = radon_operator(g, GridSpec(4))
    y = 3 * rng.standard_normal(g.n_rays)
    x, info = fista_tv(R, y, gamma, FistaConfig(max_iters=100))
    assert np.all(x >= 0)
    assert objective(R, x, y, gamma) <= 0.5 * y @ y + 1e-12


@pytest.mark.parametrize("gamma", [0.0, 0.01, 0.1, 1.0])
def test_matches_convex_oracle(small_problem, gamma):
    R, y = small_problem
    x, info = fista_tv(R, y, gamma, FistaConfig(max_iters=3000, inner_tv_iters=50, rel_tol=1e-14))
    ref = tv_cvx_oracle(R.matrix.toarray(), y, gamma, 4)
    f_ref = objective(R, ref, y, gamma)
    assert (info.objective - f_ref) / f_ref <= 1e-8


def test_zero_gamma_is_nnls(small_problem):
    R, y = small_problem
    x, info = fista_tv(R, y, 0.0, FistaConfig(max_iters=3000, rel_tol=1e-14))
    ref, rnorm = nnls(R.matrix.toarray(), y)
    assert info.objective == pytest.approx(0.5 * rnorm ** 2, rel=1e-8)


def test_deterministic(small_problem):
    R, y = small_problem
    a, _ = fista_tv(R, y, 0.05)
    b, _ = fista_tv(R, y, 0.05)
    assert np.array_equal(a, b)


def test_tv_nonincreasing_in_gamma():
    from upbre.phantom import SHEPP_LOGAN, render

    g = make_geometry(30, 48)
    grid = GridSpec(32)
    R = radon_operator(g, grid)
    rng = np.random.default_rng(4)
    y = R(render(SHEPP_LOGAN, grid)) + 0.05 * rng.standard_normal(g.n_rays)
    tvs = [tv(fista_tv(R, y, gm)[0], 32) for gm in np.geomspace(1e-3, 1.0, 10)]
    violations = np.sum(np.diff(tvs) > 1e-6 * max(tvs))
    assert violations <= 1


def test_tv_prox_properties():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((6, 6))
    x0, _ = tv_prox(z, 0.0, 10)
    np.testing.assert_array_equal(x0, np.maximum(z, 0))
    x, p = tv_prox(z, 0.3, 200)
    assert np.all(x >= 0)
    assert np.all(np.sqrt(p[0] ** 2 + p[1] ** 2) <= 0.3 * (1 + 1e-12))
    # prox value no worse than the clipped input
    val = lambda u: 0.5 * np.sum((u - z) ** 2) + 0.3 * tv(u)
    assert val(x) <= val(np.maximum(z, 0)) + 1e-12


def test_divergence_detected(small_problem):
    R, y = small_problem
    with pytest.raises(NumericalError):
        fista_tv(R, y, 0.0, FistaConfig(max_iters=50, step=100.0))


def test_tikhonov_examples():
    np.testing.assert_allclose(tikhonov_solve(np.eye(2), np.array([1.0, 1.0]), 1.0), [0.5, 0.5])
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 5)) + 5 * np.eye(5)
    b = rng.standard_normal(5)
    np.testing.assert_allclose(tikhonov_solve(A, b, 0.0), np.linalg.solve(A, b), rtol=1e-10)
    x = tikhonov_solve(A, b, 1e8)
    assert np.linalg.norm(x) <= np.linalg.norm(A.T @ b) / 1e8 * (1 + 1e-6)
    A2 = rng.standard_normal((7, 4))
    x = tikhonov_solve(A2, rng.standard_normal(7), 0.3)
    assert np.all(np.isfinite(x))


def test_tikhonov_errors():
    with pytest.raises(np.linalg.LinAlgError):
        tikhonov_solve(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones(2), 0.0)
    with pytest.raises(ValueError):
        tikhonov_solve(np.eye(65), np.ones(65), 1.0)


def test_fixed_iteration_count(small_problem):
    R, y = small_problem
    x, info = fista_tv(R, y, 0.05, FistaConfig(rel_tol=1e-3), n_iters=37)
    assert info.iterations == 37 and not info.converged
    x_free, free = fista_tv(R, y, 0.05, FistaConfig(rel_tol=1e-3))
    x_again, _ = fista_tv(R, y, 0.05, FistaConfig(rel_tol=1e-3), n_iters=free.iterations)
    assert np.array_equal(x_free, x_again)
    with pytest.raises(ValueError):
        fista_tv(R, y, 0.05, n_iters=0)
