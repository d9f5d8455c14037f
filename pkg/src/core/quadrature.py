"""
Quadrature backend for every overlap integral in the package.

Two rules are provided:
- Gauss-Hermite (probabilists' weight e^{-t^2/2}) placed at a center and scaled to a width,
  matched to Gaussian envelopes. The weight is folded back into the rule, so that
  integrate(f) approximates the plain integral of f over the real line.
- Composite Gauss-Legendre on a finite interval, for tabulated PSFs with compact support.

Both rules know how to refine themselves (doubling nodes or panels). The accuracy check used
throughout compares a rule against its refinement.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_hermitenorm

from src.core.errors import NumericalAccuracyError

logger = logging.getLogger(__name__)

DEFAULT_NODES = 200
LEGENDRE_ORDER = 8
INNER_PRODUCT_RTOL = 1e-10

AmplitudeFunction = Callable[[np.ndarray], np.ndarray]


class RuleKind(str, Enum):
    GAUSS_HERMITE = "gauss-hermite"
    COMPOSITE_LEGENDRE = "composite-legendre"


@lru_cache(maxsize=16)
def _unit_hermite_rule(n_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    t, w = roots_hermitenorm(n_nodes)
    # Outer weights may underflow; those nodes contribute nothing.
    log_w = np.full_like(w, -np.inf)
    positive = w > 0
    log_w[positive] = np.log(w[positive])
    folded = np.exp(log_w + 0.5 * t ** 2)
    t.setflags(write=False)
    folded.setflags(write=False)
    return t, folded


@lru_cache(maxsize=4)
def _unit_legendre_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    t, w = leggauss(order)
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and weights approximating the integral over the real line of a sampled integrand."""
    kind: RuleKind
    nodes: np.ndarray
    weights: np.ndarray
    resolution: int
    center: float = 0.0
    scale: float = 1.0
    lower: float = 0.0
    upper: float = 0.0

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate samples taken at `nodes`; the last axis runs over nodes."""
        return np.asarray(values) @ self.weights

    def refined(self) -> "QuadratureRule":
        if self.kind == RuleKind.GAUSS_HERMITE:
            return gauss_hermite_rule(2 * self.resolution, self.center, self.scale)
        return composite_legendre_rule(self.lower, self.upper, 2 * self.resolution)

    def descriptor(self) -> dict:
        if self.kind == RuleKind.GAUSS_HERMITE:
            return {"kind": self.kind.value, "nodes": self.resolution}
        return {"kind": self.kind.value, "panels": self.resolution, "order": LEGENDRE_ORDER}


def gauss_hermite_rule(n_nodes: int = DEFAULT_NODES, center: float = 0.0, scale: float = 1.0) -> QuadratureRule:
    """Gauss-Hermite rule for integrands with an envelope close to exp(-(x-center)^2 / (2 scale^2))."""
    t, folded = _unit_hermite_rule(int(n_nodes))
    return QuadratureRule(
        kind=RuleKind.GAUSS_HERMITE,
        nodes=center + scale * t,
        weights=scale * folded,
        resolution=int(n_nodes),
        center=float(center),
        scale=float(scale),
    )


def composite_legendre_rule(lower: float, upper: float, panels: int) -> QuadratureRule:
    """Composite Gauss-Legendre rule with equal panels on [lower, upper]."""
    if not upper > lower:
        raise ValueError(f"QUADRATURE: empty interval [{lower}, {upper}]")
    t, w = _unit_legendre_rule(LEGENDRE_ORDER)
    edges = np.linspace(lower, upper, int(panels) + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return QuadratureRule(
        kind=RuleKind.COMPOSITE_LEGENDRE,
        nodes=nodes,
        weights=weights,
        resolution=int(panels),
        lower=float(lower),
        upper=float(upper),
    )


def check_refinement(coarse, fine, scale: float, what: str, rtol: float = INNER_PRODUCT_RTOL) -> None:
    """Raise when a quadrature result moved by more than rtol * scale under refinement."""
    change = float(np.max(np.abs(np.asarray(fine) - np.asarray(coarse))))
    if not np.isfinite(change) or change > rtol * max(scale, np.finfo(float).tiny):
        raise NumericalAccuracyError(
            f"QUADRATURE: {what} changed by {change:.3e} under node doubling "
            f"(allowed {rtol * scale:.3e}); the integrand is not resolved."
        )


def _overlap(f: AmplitudeFunction, g: AmplitudeFunction, rule: QuadratureRule) -> Tuple[float, float]:
    fv = np.asarray(f(rule.nodes), dtype=float)
    gv = np.asarray(g(rule.nodes), dtype=float)
    value = float(rule.integrate(fv * gv))
    scale = float(np.sqrt(abs(rule.integrate(fv * fv)) * abs(rule.integrate(gv * gv))))
    return value, scale


def inner_product(
    f: AmplitudeFunction,
    g: AmplitudeFunction,
    rule: QuadratureRule,
    rtol: float = INNER_PRODUCT_RTOL,
) -> float:
    """
    Real inner product of two amplitude functions, checked against the refined rule.
    The tolerance is relative to sqrt(<f|f><g|g>), which keeps odd (vanishing) overlaps meaningful.
    """
    coarse, _ = _overlap(f, g, rule)
    fine, scale = _overlap(f, g, rule.refined())
    check_refinement(coarse, fine, scale, "inner product", rtol)
    return fine
