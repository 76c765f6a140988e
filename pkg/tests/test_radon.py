import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from upbre.geometry import GridSpec, ScanGeometry, make_geometry
from upbre.radon import (
    Sinogram,
    backproject,
    build_matrix,
    lipschitz_estimate,
    project,
    radon_operator,
    read_sinogram,
    write_sinogram,
    write_sinogram_csv,
)
from oracles import dense_radon_exact, dense_radon_sampled

ONE_RAY = ScanGeometry(np.array([0.0]), np.array([0.0]))


def test_zero_image():
    g = make_geometry(7, 9)
    assert np.all(project(np.zeros(16), g).values == 0)


def test_single_pixel_chord():
    assert project(np.array([1.0]), ONE_RAY).values[0] == pytest.approx(2.0, abs=1e-15)
    np.testing.assert_allclose(backproject(Sinogram(np.array([1.0]), ONE_RAY), GridSpec(1)), [2.0])


def test_two_by_two_against_line_sampling():
    g = ScanGeometry(np.array([0.0]), np.array([-0.5]))
    x = np.zeros(4)
    x[GridSpec(2).index(1, 1) - 1] = 1.0
    assert project(x, g).values[0] == pytest.approx(1.0, abs=1e-14)
    sampled = dense_radon_sampled(g.angles, g.offsets, 2) @ x
    assert sampled[0] == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("n,na,no", [(1, 5, 4), (3, 7, 5), (8, 10, 12), (16, 13, 21)])
def test_matches_exact_clipping_oracle(n, na, no):
    g = make_geometry(na, no)
    A = dense_radon_exact(g.angles, g.offsets, n)
    R = build_matrix(g, GridSpec(n)).toarray()
    np.testing.assert_allclose(R, A, rtol=0, atol=1e-6 * 2.0 / n)
    rng = np.random.default_rng(n)
    x = rng.random(n * n)
    np.testing.assert_allclose(project(x, g).values, A @ x, rtol=1e-6)


def test_sampling_oracle_agrees_at_first_order():
    g = make_geometry(6, 8)
    A = dense_radon_sampled(g.angles, g.offsets, 4)
    R = build_matrix(g, GridSpec(4)).toarray()
    assert np.max(np.abs(A - R)) < 1e-4


def test_edge_aligned_rays_follow_half_open_pixels():
    # vertical line x = 0 lies on the boundary between columns; it belongs to the right column
    g = ScanGeometry(np.array([0.0, np.pi / 2]), np.array([0.0, 1.0]))
    R = build_matrix(g, GridSpec(2)).toarray()
    np.testing.assert_allclose(R[0], [0, 1, 0, 1])
    np.testing.assert_allclose(R[1], 0)  # x = 1: right border, outside
    # theta = pi/2, t = 0: the line y = 0 belongs to the upper row
    np.testing.assert_allclose(R[2], [0, 0, 1, 1])
    np.testing.assert_allclose(R[3], 0)  # y = 1: top border, outside


def test_bottom_border_ray():
    # theta = pi/2: the line y = t
    g = ScanGeometry(np.array([np.pi / 2]), np.array([-1.0, 1.0]))
    R = build_matrix(g, GridSpec(2)).toarray()
    np.testing.assert_allclose(R[0], [1, 1, 0, 0])  # y = -1 is included
    np.testing.assert_allclose(R[1], 0)


@pytest.mark.parametrize("n,na,no", [(8, 10, 12), (16, 9, 23)])
def test_adjoint_and_linearity(n, na, no):
    g = make_geometry(na, no)
    grid = GridSpec(n)
    rng = np.random.default_rng(0)
    x, x2, y = rng.standard_normal(n * n), rng.standard_normal(n * n), rng.standard_normal(g.n_rays)
    lhs = project(x, g, grid).values @ y
    rhs = x @ backproject(Sinogram(y, g), grid)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)
    a = 2.7
    lin = project(a * x + x2, g, grid).values
    ref = a * project(x, g, grid).values + project(x2, g, grid).values
    assert np.linalg.norm(lin - ref) <= 1e-12 * np.linalg.norm(ref)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 9), st.integers(2, 11), st.integers(0, 2**31))
def test_adjoint_property(n, na, no, seed):
    g = make_geometry(na, no)
    grid = GridSpec(n)
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(n * n), rng.standard_normal(g.n_rays)
    lhs = project(x, g, grid).values @ y
    rhs = x @ backproject(Sinogram(y, g), grid)
    assert abs(lhs - rhs) <= 1e-10 * max(np.linalg.norm(x) * np.linalg.norm(y), 1e-300)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 9), st.integers(2, 11), st.integers(0, 2**31))
def test_nonnegative_image_projects_nonnegative(n, na, no, seed):
    x = np.random.default_rng(seed).random(n * n)
    assert np.all(project(x, make_geometry(na, no)).values >= 0)


def test_lipschitz():
    assert lipschitz_estimate(ONE_RAY, GridSpec(1), 1) == pytest.approx(4.0)
    g = make_geometry(10, 12)
    grid = GridSpec(8)
    dense = build_matrix(g, grid).toarray()
    smax2 = np.linalg.svd(dense, compute_uv=False)[0] ** 2
    est50 = lipschitz_estimate(g, grid, 50)
    assert est50 == pytest.approx(smax2, rel=0.01)
    assert lipschitz_estimate(g, grid, 1) <= est50 * (1 + 1e-6)


def test_operator_cache_is_shared():
    g = make_geometry(4, 5)
    assert radon_operator(g, GridSpec(3)) is radon_operator(make_geometry(4, 5), GridSpec(3))


def test_sinogram_validation():
    g = make_geometry(2, 3)
    with pytest.raises(ValueError):
        Sinogram(np.zeros(5), g)
    with pytest.raises(ValueError):
        Sinogram(np.array([0, 0, 0, 0, 0, np.nan]), g)


def test_sinogram_io_round_trip(tmp_path):
    g = make_geometry(3, 4)
    s = Sinogram(np.random.default_rng(1).standard_normal(12), g)
    write_sinogram(tmp_path / "s.bin", s)
    raw = (tmp_path / "s.bin").read_bytes()
    assert raw[:8] == b"UPBRSINO" and len(raw) == 16 + 8 * 12
    back = read_sinogram(tmp_path / "s.bin")
    np.testing.assert_array_equal(back.values, s.values)
    assert back.geometry == g
    write_sinogram_csv(tmp_path / "s.csv", s)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "theta,t,value" and len(lines) == 13
