"""Critical time step estimates for the explicit updates.

The highest natural frequency of an unassembled quadratic element of
length h is bounded by (2 sqrt(6) / h) * c, where c is the current
tangent wave speed sqrt(E (1 + 1/F^2) / (2 rho)). The assembled maximum
frequency never exceeds the element maximum, so

    dt_crit = CFL * min over elements of 2 / omega_e

is a safe explicit step. Stretch enters through the tangent, which means
the bound must be re-evaluated as the solution deforms: compression
stiffens the material and shrinks the step, tension relaxes it.

For two-scale runs two bounds exist. The fine bound treats every fine
element with the total stretch and governs the fully explicit schemes.
The coarse bound uses the coarse element length with the stiffest
quadrature point found anywhere inside that coarse element and governs
the scheme whose fine scale is implicit.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .assembly import DnsOperators, Operators
from .material import wave_speed_factor

__all__ = [
    "DT_FLOOR",
    "CriticalDt",
    "element_max_frequency",
    "critical_dt_dns",
    "critical_dt_multiscale",
    "cfl_cap",
    "clamp_cfl",
]

DT_FLOOR = 1e-9

_OMEGA_FACTOR = 2.0 * np.sqrt(6.0)


@dataclass(frozen=True)
class CriticalDt:
    """Stable time step candidates for one discrete state.

    dt_dns is the bound of the underlying single-scale grid (for a
    two-scale problem that is the fine grid, so dt_dns == dt_fine).
    """

    dt_dns: float
    dt_coarse: float
    dt_fine: float
    cfl: float
    scheme: str

    @property
    def dt(self):
        """The step that governs the requested scheme."""
        if self.scheme == "ei-ssm":
            return self.dt_coarse
        return self.dt_fine


def element_max_frequency(h, E_el, rho, F):
    """Upper bound on the natural frequency of each quadratic element.

    F holds the stretch at the element quadrature points, shape (n_el, 3);
    the stiffest point controls.
    """
    c = wave_speed_factor(np.asarray(E_el, dtype=float)[:, None], rho, F)
    return (_OMEGA_FACTOR / h) * np.max(c, axis=1)


def critical_dt_dns(ops: DnsOperators, F, cfl, scheme="ee-cdm"):
    omega = element_max_frequency(ops.h, ops.E_el, ops.rho, F)
    dt = cfl * np.min(2.0 / omega)
    return CriticalDt(dt_dns=dt, dt_coarse=dt, dt_fine=dt, cfl=cfl, scheme=scheme)


def critical_dt_multiscale(ops: Operators, F, cfl, scheme):
    """Fine and coarse bounds from the total stretch at the fine quad points."""
    mesh = ops.mesh
    omega_f = element_max_frequency(mesh.h_f, ops.E_el, ops.rho, F)
    dt_fine = cfl * np.min(2.0 / omega_f)

    c = wave_speed_factor(ops.E_q, ops.rho, F)
    c_by_coarse = c.reshape(mesh.n_cel, -1)
    omega_c = (_OMEGA_FACTOR / mesh.h_c) * np.max(c_by_coarse, axis=1)
    dt_coarse = cfl * np.min(2.0 / omega_c)

    return CriticalDt(
        dt_dns=dt_fine, dt_coarse=dt_coarse, dt_fine=dt_fine, cfl=cfl, scheme=scheme
    )


def cfl_cap(scheme, p=0.54):
    """Largest CFL number the update can tolerate.

    The central-difference scheme is stable up to CFL 1. The sub-stepped
    schemes advance their explicit part by p * dt at a time, so the cap
    on the full step is 1 / p.
    """
    if scheme == "ee-cdm":
        return 1.0
    return 1.0 / p


def clamp_cfl(cfl, scheme, p=0.54):
    cap = cfl_cap(scheme, p)
    if cfl > cap:
        warnings.warn(
            f"CFL {cfl} exceeds the {scheme} stability cap {cap:.6g}; clamping",
            stacklevel=2,
        )
        return cap
    return float(cfl)
