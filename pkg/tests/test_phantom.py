import math

import numpy as np
import pytest

from upbre.geometry import GridSpec
from upbre.phantom import (
    MODIFIED_SHEPP_LOGAN,
    SHEPP_LOGAN,
    Ellipse,
    EllipsePhantom,
    block_average,
    load_phantom,
    load_phantom_csv,
    render,
    read_raw,
    save_phantom_csv,
    write_pgm,
    write_raw,
)


def _inside(e, x, y):
    # independent containment test via the quadratic form of the rotated ellipse
    t = math.radians(e.rotation_deg)
    R = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    M = R @ np.diag([1 / e.semi_axis_a ** 2, 1 / e.semi_axis_b ** 2]) @ R.T
    d = np.array([x - e.center_x, y - e.center_y])
    return d @ M @ d <= 1.0


def test_empty_phantom_renders_zero():
    assert np.all(render(EllipsePhantom(()), GridSpec(8)) == 0)


def test_unit_disk_single_pixel():
    np.testing.assert_array_equal(render(EllipsePhantom((Ellipse(0, 0, 1, 1, 0, 1.0),)), GridSpec(1)), [1.0])


def test_center_pixels_against_point_oracle():
    grid = GridSpec(64)
    x = render(SHEPP_LOGAN, grid)
    X, Y = grid.centers()
    for i in (30, 31, 32, 33, 10, 50):
        for j in (20, 31, 32, 45):
            px, py = X[i, j], Y[i, j]
            ref = sum(e.intensity for e in SHEPP_LOGAN.ellipses if _inside(e, px, py))
            assert x[i * 64 + j] == pytest.approx(ref, abs=1e-12)


def test_intensity_range():
    x = render(SHEPP_LOGAN, GridSpec(256))
    assert x.min() >= -1e-12 and x.max() <= 2.0 + 1e-12
    assert x.max() == pytest.approx(2.0)  # skull rim


def test_modified_variant_shares_geometry():
    assert [e.center_x for e in MODIFIED_SHEPP_LOGAN.ellipses] == [e.center_x for e in SHEPP_LOGAN.ellipses]
    assert MODIFIED_SHEPP_LOGAN.ellipses[0].intensity == 1.0
    assert load_phantom("modified") is MODIFIED_SHEPP_LOGAN and load_phantom("shepp-logan") is SHEPP_LOGAN


def test_block_average_resolution_consistency():
    fine, coarse = GridSpec(2048), GridSpec(512)
    avg = block_average(render(SHEPP_LOGAN, fine), fine, 4)
    direct = render(SHEPP_LOGAN, coarse)
    diff = np.abs(avg - direct)
    assert diff.max() <= SHEPP_LOGAN.max_abs_intensity
    assert np.mean(diff > 1e-12) <= 0.02


def test_block_average_constant():
    g = GridSpec(6)
    np.testing.assert_allclose(block_average(np.full(36, 3.0), g, 3), 3.0)
    with pytest.raises(ValueError):
        block_average(np.zeros(36), g, 4)


def test_rejects_degenerate_ellipse():
    with pytest.raises(ValueError):
        Ellipse(0, 0, 0.0, 1, 0, 1)


def test_csv_round_trip(tmp_path):
    save_phantom_csv(tmp_path / "p.csv", SHEPP_LOGAN)
    assert load_phantom_csv(tmp_path / "p.csv") == SHEPP_LOGAN
    assert load_phantom(str(tmp_path / "p.csv")) == SHEPP_LOGAN


def test_image_files(tmp_path):
    x = np.arange(16, dtype=float)
    write_raw(tmp_path / "x.raw", x)
    np.testing.assert_array_equal(read_raw(tmp_path / "x.raw"), x)
    write_pgm(tmp_path / "x.pgm", x)
    raw = (tmp_path / "x.pgm").read_bytes()
    header = b"P5\n4 4\n65535\n"
    assert raw.startswith(header)
    px = np.frombuffer(raw[len(header):], dtype=">u2").reshape(4, 4)
    # top file row is the highest-y image row
    assert px[0, 0] == round(12 / 15 * 65535) and px[3, 0] == 0 and px[0, 3] == 65535
