import logging
from functools import lru_cache

import numpy as np

from src.core.psf import PsfKind, PsfModel
from src.core.quadrature import QuadratureRule, check_refinement, composite_legendre_rule
from src.limits.fisher import FisherKind, FisherMatrix, SourceParams

logger = logging.getLogger(__name__)

DIRECT_RTOL = 1e-9
# Gaussian tails past this many widths carry under 1e-20 of the information.
GAUSSIAN_REACH = 10.0
PANELS_PER_WIDTH = 2
# Nodes darker than this fraction of the brightest node are dropped.
DARK_FRACTION = 1e-200


def intensity_profile(model: PsfModel, theta: SourceParams, x) -> np.ndarray:
    """I(x) = q Psi(x - s0 - s/2)^2 + (1 - q) Psi(x - s0 + s/2)^2."""
    x = np.asarray(x, dtype=float)
    bright = model.amplitude(x - theta.s0 - 0.5 * theta.s)
    dim = model.amplitude(x - theta.s0 + 0.5 * theta.s)
    return theta.q * bright ** 2 + (1.0 - theta.q) * dim ** 2


def _direct_rule(model: PsfModel, theta: SourceParams) -> QuadratureRule:
    if model.kind == PsfKind.GAUSSIAN:
        # one interval spanning both images and the gap between them
        half_width = 0.5 * theta.s + GAUSSIAN_REACH * model.sigma
        panels = int(np.ceil(2.0 * half_width * PANELS_PER_WIDTH / model.sigma))
        return composite_legendre_rule(theta.s0 - half_width, theta.s0 + half_width, panels)
    return model.quadrature_rule(center=theta.s0, reach=0.5 * theta.s)


def _integrate_information(model: PsfModel, theta: SourceParams, rule: QuadratureRule) -> np.ndarray:
    x = rule.nodes
    q = theta.q
    bright = model.amplitude(x - theta.s0 - 0.5 * theta.s)
    dim = model.amplitude(x - theta.s0 + 0.5 * theta.s)
    bright_slope = bright * model.amplitude(x - theta.s0 - 0.5 * theta.s, 1)
    dim_slope = dim * model.amplitude(x - theta.s0 + 0.5 * theta.s, 1)

    intensity = q * bright ** 2 + (1.0 - q) * dim ** 2
    gradients = np.vstack([
        -2.0 * q * bright_slope - 2.0 * (1.0 - q) * dim_slope,
        -q * bright_slope + (1.0 - q) * dim_slope,
        bright ** 2 - dim ** 2,
    ])
    lit = intensity > DARK_FRACTION * float(np.max(intensity))
    score = gradients[:, lit] / intensity[lit]
    return (score * (rule.weights[lit] * intensity[lit])) @ score.T


@lru_cache(maxsize=1024)
def _direct_matrix(model: PsfModel, s0: float, s: float, q: float) -> np.ndarray:
    theta = SourceParams(s0=s0, s=s, q=q)
    rule = _direct_rule(model, theta)
    coarse = _integrate_information(model, theta, rule)
    fine = _integrate_information(model, theta, rule.refined())
    check_refinement(coarse, fine, float(np.max(np.abs(fine))), "direct-imaging information", DIRECT_RTOL)
    return fine


def direct_imaging_fim(model: PsfModel, theta: SourceParams) -> FisherMatrix:
    """Information per photon of ideal position-resolved detection: F_ab = int (d_a I)(d_b I) / I dx."""
    matrix = _direct_matrix(model, theta.s0, theta.s, theta.q)
    return FisherMatrix(matrix=matrix, kind=FisherKind.CLASSICAL, method="direct-imaging", theta=theta, psf=model.descriptor())
