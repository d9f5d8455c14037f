import numpy as np
import pytest

from src.core.errors import NumericalAccuracyError
from src.core.quadrature import (
    RuleKind,
    check_refinement,
    composite_legendre_rule,
    gauss_hermite_rule,
    inner_product,
)


def _unit_gaussian(x):
    return (2 * np.pi) ** -0.25 * np.exp(-x ** 2 / 4)


def test_gauss_hermite_integrates_plain_gaussian():
    rule = gauss_hermite_rule(40)
    assert rule.integrate(np.exp(-rule.nodes ** 2 / 2)) == pytest.approx(np.sqrt(2 * np.pi), rel=1e-12)
    assert rule.integrate(rule.nodes ** 2 * np.exp(-rule.nodes ** 2 / 2)) == pytest.approx(np.sqrt(2 * np.pi), rel=1e-12)


def test_gauss_hermite_center_and_scale():
    rule = gauss_hermite_rule(60, center=3.0, scale=2.0)
    assert rule.integrate(np.exp(-(rule.nodes - 3.0) ** 2 / 8)) == pytest.approx(np.sqrt(8 * np.pi), rel=1e-12)


def test_composite_legendre_on_interval():
    rule = composite_legendre_rule(0.0, np.pi, 4)
    assert rule.kind == RuleKind.COMPOSITE_LEGENDRE
    assert rule.integrate(np.sin(rule.nodes)) == pytest.approx(2.0, rel=1e-12)
    assert len(rule.nodes) == 4 * 8


def test_refined_doubles_resolution():
    assert gauss_hermite_rule(50).refined().resolution == 100
    assert composite_legendre_rule(-1, 1, 10).refined().resolution == 20


def test_empty_interval_rejected():
    with pytest.raises(ValueError):
        composite_legendre_rule(1.0, 1.0, 4)


def test_check_refinement_raises_on_large_change():
    check_refinement(1.0, 1.0 + 1e-12, 1.0, "value", 1e-10)
    with pytest.raises(NumericalAccuracyError):
        check_refinement(1.0, 1.0 + 1e-6, 1.0, "value", 1e-10)


def test_inner_product_normalized_gaussian():
    rule = gauss_hermite_rule(100)
    assert inner_product(_unit_gaussian, _unit_gaussian, rule) == pytest.approx(1.0, abs=1e-12)
    odd = inner_product(_unit_gaussian, lambda x: x * _unit_gaussian(x), rule)
    assert abs(odd) < 1e-14


def test_inner_product_detects_unresolved_integrand():
    rule = gauss_hermite_rule(10)
    oscillating = lambda x: np.cos(40 * x) * _unit_gaussian(x)  # noqa: E731
    with pytest.raises(NumericalAccuracyError):
        inner_product(oscillating, oscillating, rule)
