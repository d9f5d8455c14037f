import numpy as np
import pytest

from src.core.errors import CapabilityError, DomainError, UsageError
from src.core.psf import (
    PsfKind,
    compute_moments,
    eval_psf,
    gaussian_psf,
    intensity_moments,
    load_tabulated_psf,
    psf_from_descriptor,
    richardson_derivative,
    tabulated_psf,
)


def test_gaussian_peak_value(gaussian):
    assert eval_psf(gaussian, 0, 0.0) == pytest.approx((2 * np.pi) ** -0.25, rel=1e-14)
    assert float(eval_psf(gaussian, 0, 0.0)) == pytest.approx(0.63162, abs=1e-5)


def test_gaussian_unit_norm(gaussian):
    rule = gaussian.quadrature_rule()
    assert rule.integrate(gaussian.amplitude(rule.nodes) ** 2) == pytest.approx(1.0, abs=1e-10)


def test_gaussian_width_scales():
    wide = gaussian_psf(2.5)
    rule = wide.quadrature_rule()
    assert rule.integrate(wide.amplitude(rule.nodes) ** 2) == pytest.approx(1.0, abs=1e-10)
    assert intensity_moments(wide)[1] == pytest.approx(6.25, rel=1e-10)


@pytest.mark.parametrize("order, tol", [(1, 1e-9), (2, 1e-6)])
def test_closed_form_derivatives_match_differences(gaussian, order, tol):
    x = np.linspace(-3, 3, 13)
    numeric = richardson_derivative(lambda t: gaussian.amplitude(t), x, order, 1e-4 if order == 1 else 1e-3)
    np.testing.assert_allclose(numeric, gaussian.amplitude(x, order), atol=tol)


def test_order_beyond_capability(gaussian):
    with pytest.raises(CapabilityError):
        gaussian.amplitude(0.0, 65)


def test_invalid_width():
    with pytest.raises(DomainError):
        gaussian_psf(0.0)


def test_moments_at_zero_separation(gaussian):
    m = compute_moments(gaussian, 0.0)
    assert m.p_squared == pytest.approx(0.25, rel=1e-12)
    assert m.fourth_moment == pytest.approx(3 / 16, rel=1e-12)
    assert m.var_p_squared == pytest.approx(1 / 8, rel=1e-12)
    assert m.w == pytest.approx(1.0, abs=1e-14)
    assert abs(m.p_imag) < 1e-15
    assert m.one_minus_w == 0.0


@pytest.mark.parametrize("s", [1e-3, 0.1, 0.6, 2.0])
def test_gaussian_overlaps(gaussian, s):
    m = compute_moments(gaussian, s)
    w = np.exp(-s ** 2 / 8)
    assert m.w == pytest.approx(w, rel=1e-12)
    assert m.p_imag == pytest.approx(s * w / 4, rel=1e-9)
    assert m.one_minus_w == pytest.approx(-np.expm1(-s ** 2 / 8), rel=1e-8)


@pytest.mark.parametrize("name, s", [("gaussian", 1e-3), ("gaussian", 0.4), ("gaussian", 2.5), ("tabulated", 0.4)])
def test_overlap_parity_in_separation(request, name, s):
    model = request.getfixturevalue(name)
    ahead, behind = compute_moments(model, s), compute_moments(model, -s)
    assert behind.w == pytest.approx(ahead.w, rel=1e-12)
    assert behind.one_minus_w == pytest.approx(ahead.one_minus_w, rel=1e-8)
    assert behind.p_imag == pytest.approx(-ahead.p_imag, rel=1e-8)


def test_intensity_moments(gaussian):
    mean, variance = intensity_moments(gaussian)
    assert abs(mean) < 1e-14
    assert variance == pytest.approx(1.0, rel=1e-12)


def test_tabulated_matches_gaussian(tabulated, gaussian):
    assert tabulated.kind == PsfKind.TABULATED
    assert tabulated.sigma == pytest.approx(1.0, rel=1e-6)
    x = np.linspace(-4, 4, 17)
    np.testing.assert_allclose(tabulated.amplitude(x), gaussian.amplitude(x), atol=1e-8)
    np.testing.assert_allclose(tabulated.amplitude(x, 1), gaussian.amplitude(x, 1), atol=1e-7)


def test_tabulated_is_zero_outside_table(tabulated):
    assert tabulated.amplitude(12.0) == 0.0
    with pytest.raises(CapabilityError):
        tabulated.amplitude(0.0, 5)


def test_tabulated_rejects_bad_tables():
    x = np.linspace(-5, 5, 20)
    with pytest.raises(UsageError):
        tabulated_psf(x[::-1], np.exp(-x ** 2))
    with pytest.raises(UsageError):
        tabulated_psf(x[:4], np.exp(-x[:4] ** 2))
    with pytest.raises(UsageError):
        tabulated_psf(x, np.zeros_like(x))


def test_load_table_from_file(psf_table_file):
    model = load_tabulated_psf(psf_table_file)
    assert model.table.source == str(psf_table_file)
    assert float(model.amplitude(0.0)) == pytest.approx((2 * np.pi) ** -0.25, abs=1e-8)


def test_descriptors(psf_table_file, tmp_path):
    assert psf_from_descriptor("gaussian", 2.0).sigma == 2.0
    assert psf_from_descriptor(f"table:{psf_table_file}").kind == PsfKind.TABULATED
    with pytest.raises(UsageError):
        psf_from_descriptor("airy")
    with pytest.raises(UsageError):
        psf_from_descriptor(f"table:{tmp_path / 'missing.txt'}")


def test_table_spacing(tabulated):
    assert tabulated.table.spacing == pytest.approx(0.01, rel=1e-9)


@pytest.mark.parametrize("s", [1e-6, 0.3, -0.3])
def test_shift_difference_matches_subtraction(gaussian, s):
    x = np.linspace(-5, 5, 41)
    expected = gaussian.amplitude(x + s) - gaussian.amplitude(x)
    np.testing.assert_allclose(gaussian.shift_difference(x, s), expected, rtol=1e-6, atol=1e-15)
