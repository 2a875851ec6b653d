"""Compressible Neo-Hookean constitutive law in 1-D.

With Poisson ratio nu = 0 the Lame parameters collapse to lambda = 0,
mu = E/2, and everything reduces to scalar functions of the stretch
F = 1 + du/dX:

    psi(F) = E/4 (F^2 - 1 - 2 ln F)
    P(F)   = E/2 (F - 1/F)
    D(F)   = dP/dF = E/2 (1 + 1/F^2)

E enters linearly, so the modulus is passed per evaluation point
(heterogeneous microstructures carry one value per fine element).
All functions broadcast over numpy arrays. F <= 0 raises, never clamps.
"""

import numpy as np

from .errors import NonPositiveStretch

__all__ = [
    "energy",
    "stress",
    "tangent",
    "wave_speed_factor",
    "check_stretch",
]


def check_stretch(F, where=""):
    """Raise NonPositiveStretch if any entry of F is <= 0 (or not finite)."""
    F = np.asarray(F)
    fmin = float(np.min(F)) if F.size else 1.0
    if not np.isfinite(fmin) or fmin <= 0.0:
        raise NonPositiveStretch(fmin, where)


def energy(E, F):
    """Strain energy density psi(F). Zero exactly at F = 1, positive elsewhere."""
    F = np.asarray(F, dtype=float)
    check_stretch(F, "energy")
    return np.asarray(E) / 4.0 * (F * F - 1.0 - 2.0 * np.log(F))


def stress(E, F):
    """First Piola-Kirchhoff stress P = dpsi/dF = E/2 (F - 1/F)."""
    F = np.asarray(F, dtype=float)
    check_stretch(F, "stress")
    return np.asarray(E) / 2.0 * (F - 1.0 / F)


def tangent(E, F):
    """Material tangent D = dP/dF = E/2 (1 + 1/F^2). Positive for all F > 0."""
    F = np.asarray(F, dtype=float)
    check_stretch(F, "tangent")
    return np.asarray(E) / 2.0 * (1.0 + 1.0 / (F * F))


def wave_speed_factor(E, rho, F):
    """Linearized wave speed sqrt(D / rho) = sqrt(E/(2 rho) (1 + 1/F^2)).

    This is the quadrature-point quantity entering the element frequency
    estimate; at F = 1 it reduces to the usual sqrt(E/rho).
    """
    F = np.asarray(F, dtype=float)
    check_stretch(F, "wave_speed_factor")
    return np.sqrt(np.asarray(E) / (2.0 * np.asarray(rho)) * (1.0 + 1.0 / (F * F)))
