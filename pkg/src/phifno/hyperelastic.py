"""Compressible Neo-Hookean law for 2x2 deformation gradients (plane strain)."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MaterialParams:
    mu: float
    lam: float

    def __post_init__(self):
        if not self.mu > 0 or not self.lam >= 0:
            raise ValueError("need mu > 0 and lambda >= 0")


def lame_from_youngs(E, nu):
    """Lame parameters from Young's modulus ``E`` and Poisson ratio ``nu``."""
    if not E > 0:
        raise ValueError("Young's modulus must be positive")
    if not -1.0 < nu < 0.5:
        raise ValueError("Poisson ratio must lie in (-1, 0.5)")
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return MaterialParams(mu, lam)


def _jacobian(F):
    F = np.asarray(F, dtype=float)
    if F.shape[-2:] != (2, 2):
        raise ValueError("F must be 2x2")
    J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    if np.any(J <= 0):
        raise ValueError("det F must be positive")
    return F, J


def neo_hookean_energy(F, mat):
    """``mu/2 (I1 - 3 - 2 ln J) + lam/2 (ln J)^2`` with ``I1 = tr(F^T F) + 1``.

    Accepts a single ``(2, 2)`` matrix or a stack ``(..., 2, 2)``.
    """
    F, J = _jacobian(F)
    I1 = np.sum(F**2, axis=(-2, -1)) + 1.0
    lnJ = np.log(J)
    return 0.5 * mat.mu * (I1 - 3.0 - 2.0 * lnJ) + 0.5 * mat.lam * lnJ**2


def first_piola(F, mat):
    """``P = dW/dF = mu F - mu F^-T + lam ln(J) F^-T``."""
    F, J = _jacobian(F)
    # F^-T = cof(F) / J
    inv_T = np.empty_like(F)
    inv_T[..., 0, 0] = F[..., 1, 1]
    inv_T[..., 0, 1] = -F[..., 1, 0]
    inv_T[..., 1, 0] = -F[..., 0, 1]
    inv_T[..., 1, 1] = F[..., 0, 0]
    inv_T /= J[..., None, None]
    coeff = (mat.lam * np.log(J) - mat.mu)[..., None, None]
    return mat.mu * F + coeff * inv_T
