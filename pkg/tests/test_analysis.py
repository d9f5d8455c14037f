import numpy as np
import pytest

from src.core.errors import DomainError, UsageError
from src.limits.fisher import SourceParams
from src.measurement.analysis import (
    SCAN_COLUMNS,
    displacement_grid,
    evaluate_scan_point,
    lorentzian_fit,
    lorentzian_model,
    optimal_displacement,
    peak_displacement,
)


def test_optimal_displacement_is_weighted_centroid():
    assert optimal_displacement(SourceParams(0.1, 0.2, 0.3)) == pytest.approx(0.1 - 0.2 * 0.4 / 2)
    assert optimal_displacement(SourceParams(0.1, 0.2, 0.5)) == pytest.approx(0.1)


def test_lorentzian_recovers_synthetic_parameters():
    s, s0 = 0.02, 0.05
    x = np.linspace(s0 - 0.1, s0 + 0.1, 41)
    y = lorentzian_model(x, 3.0, 4.76, 0.2, s, s0)
    fit = lorentzian_fit(list(zip(x, y)), s, s0)
    assert (fit.l1, fit.l2, fit.l3) == pytest.approx((3.0, 4.76, 0.2), rel=1e-8)
    assert fit.center == pytest.approx(s0 - 0.2 * s, abs=1e-10)
    assert fit.half_width == pytest.approx(s / np.sqrt(4.76), rel=1e-8)
    assert fit.residual < 1e-10


def test_lorentzian_needs_bracketed_peak():
    x = np.linspace(0.0, 0.1, 11)
    with pytest.raises(UsageError):
        lorentzian_fit(list(zip(x, lorentzian_model(x, 1.0, 4.0, 0.5, 0.02))), 0.02)
    with pytest.raises(UsageError):
        lorentzian_fit([(0.0, 1.0), (0.1, 2.0), (0.2, 1.0)], 0.02)


def test_displacement_grid_defaults_to_five_separations():
    grid = displacement_grid(SourceParams(0.2, 0.02, 0.3), points=11)
    assert grid[0] == pytest.approx(0.1)
    assert grid[-1] == pytest.approx(0.3)
    with pytest.raises(DomainError):
        displacement_grid(SourceParams(0.0, 0.0, 0.3))


def test_scan_row_carries_all_columns(gaussian, theta):
    row = evaluate_scan_point(gaussian, theta, 9 * np.pi / 20, optimal_displacement(theta))
    values = row.values()
    assert len(values) == len(SCAN_COLUMNS)
    assert row.flags == ()
    assert row.Hdir_s < row.H_s <= row.Hq_s * (1 + 1e-9)


def _scan(gaussian, s, q=0.3, points=61):
    theta = SourceParams(0.0, s, q)
    grid = displacement_grid(theta, points)
    rows = [evaluate_scan_point(gaussian, theta, 9 * np.pi / 20, x0) for x0 in grid]
    return theta, grid, rows


@pytest.mark.parametrize("s", [0.02, 0.014, 0.01])
def test_displacement_scan_is_lorentzian(gaussian, s):
    theta, grid, rows = _scan(gaussian, s)
    step = grid[1] - grid[0]
    fit = lorentzian_fit([(r.x0, r.H_s) for r in rows], s, theta.s0)
    assert fit.l2 == pytest.approx(1 / (0.3 * 0.7), rel=0.05)
    assert abs(fit.center - optimal_displacement(theta)) <= step
    assert abs(peak_displacement(rows) - optimal_displacement(theta)) <= step


def test_lorentzian_width_scales_with_separation(gaussian):
    widths = []
    for s in (0.02, 0.01):
        theta, _, rows = _scan(gaussian, s)
        widths.append(lorentzian_fit([(r.x0, r.H_s) for r in rows], s, theta.s0).half_width)
    assert widths[0] / widths[1] == pytest.approx(2.0, rel=0.05)


def test_misaligned_measurement_beats_direct_imaging(gaussian):
    theta = SourceParams(0.0, 0.03, 0.1)
    centre = optimal_displacement(theta)
    for x0 in np.linspace(centre - 0.4, centre + 0.4, 9):
        row = evaluate_scan_point(gaussian, theta, 9 * np.pi / 20, x0)
        assert row.Hdir_s < row.H_s <= row.Hq_s * (1 + 1e-9)


@pytest.mark.parametrize("s, tol", [(1e-3, 1e-9), (1e-4, 1e-6)])
def test_aligned_measurement_never_exceeds_quantum_limit(gaussian, s, tol):
    theta = SourceParams(0.0, s, 0.3)
    row = evaluate_scan_point(gaussian, theta, 9 * np.pi / 20, optimal_displacement(theta))
    assert 0.99 < row.H_s / row.Hq_s <= 1 + tol
