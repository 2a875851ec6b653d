"""Problem setup and measurement: microstructure, initial pulse, errors.

The domain is [-1/2, 1/2] with pinned ends. A periodic two-phase layout
tiles it with cells: the leading fraction of every cell carries the
reference modulus, the remainder a contrast multiple of it. Element
moduli are assigned cell-relative, which is exact whenever the phase
boundaries line up with element boundaries; anything else is refused.

All quantities are treated in nondimensional form (lengths by the domain
size, time by the transit time of the reference phase's linear wave).
Helpers to move between physical and nondimensional values are at the
bottom.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MissingSnapshot, NonConformingPhase, ZeroReference
from .mesh import TwoScaleMesh, coarse_parent_coord, shape_values

__all__ = [
    "InitialPulse",
    "Microstructure",
    "build_modulus_field",
    "build_initial_condition",
    "split_displacement",
    "total_displacement",
    "sample_total",
    "reference_coords",
    "relative_error_linf",
    "find_snapshot",
    "pair_snapshots",
    "nondimensionalize",
    "redimensionalize",
]

DENOM_FLOOR = 1e-14


@dataclass(frozen=True)
class InitialPulse:
    """Smooth compact displacement hump u(X) = amplitude * (1 - tanh(X / width)^2)."""

    amplitude: float = 0.04
    width: float = 0.05

    def displacement(self, x):
        s = np.tanh(np.asarray(x, dtype=float) / self.width)
        return self.amplitude * (1.0 - s * s)


@dataclass(frozen=True)
class Microstructure:
    """Periodic two-phase layout.

    Each cell of size cell_size starts with a stretch of the reference
    phase (modulus_a) covering `fraction` of the cell; the remainder has
    modulus contrast * modulus_a. contrast = 1 is a homogeneous bar.
    """

    cell_size: float = 0.01
    contrast: float = 1.0
    fraction: float = 0.5
    modulus_a: float = 1.0
    rho: float = 1.0

    @property
    def modulus_b(self):
        return self.contrast * self.modulus_a


def build_modulus_field(micro: Microstructure, n_el, length=1.0):
    """Modulus per element for a uniform grid of n_el elements.

    Raises NonConformingPhase unless both the cell boundaries and the
    in-cell phase boundary fall on element boundaries.
    """
    per_cell_f = n_el * micro.cell_size / length
    per_cell = round(per_cell_f)
    if per_cell < 1 or abs(per_cell_f - per_cell) > 1e-9:
        raise NonConformingPhase(
            f"cell size {micro.cell_size} does not hold a whole number of "
            f"elements ({per_cell_f:.6g} per cell)"
        )
    n_a_f = micro.fraction * per_cell
    n_a = round(n_a_f)
    if abs(n_a_f - n_a) > 1e-9:
        raise NonConformingPhase(
            f"phase fraction {micro.fraction} needs {n_a_f:.6g} elements of "
            f"the {per_cell} in each cell"
        )
    j = np.arange(n_el) % per_cell
    return np.where(j < n_a, micro.modulus_a, micro.modulus_b).astype(float)


def build_initial_condition(pulse: InitialPulse, coords):
    """Nodal displacement of the pulse; initial velocities are zero."""
    return pulse.displacement(coords)


def _locate(mesh: TwoScaleMesh, x):
    x = np.asarray(x, dtype=float)
    rel = (x - mesh.x0) / mesh.h_f
    e = np.clip(np.floor(rel).astype(int), 0, mesh.n_fel - 1)
    xi_f = 2.0 * (rel - e) - 1.0
    return e, xi_f


def split_displacement(mesh: TwoScaleMesh, d_c, d_f, x):
    """Coarse and fine displacement contributions at arbitrary points."""
    e, xi_f = _locate(mesh, x)
    Nf = shape_values(xi_f)
    u_f = np.einsum("pj,pj->p", Nf, d_f[mesh.gather_f[e]], optimize=False)
    r = mesh.r
    xi_c = coarse_parent_coord(xi_f, e % r, r)
    Nc = shape_values(xi_c)
    u_c = np.einsum(
        "pj,pj->p", Nc, d_c[mesh.gather_c[mesh.fine_to_coarse[e]]], optimize=False
    )
    return u_c, u_f


def total_displacement(mesh: TwoScaleMesh, d_c, d_f, x):
    u_c, u_f = split_displacement(mesh, d_c, d_f, x)
    return u_c + u_f


def _dns_displacement_at(problem, d, x):
    """Quadratic interpolation of a single-scale nodal field."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    h = problem.length / problem.n_el
    rel = (x - problem.x0) / h
    e = np.clip(np.floor(rel).astype(int), 0, problem.n_el - 1)
    xi = 2.0 * (rel - e) - 1.0
    N = shape_values(xi)
    conn = 2 * e[:, None] + np.arange(3)[None, :]
    return np.einsum("pj,pj->p", N, d[conn], optimize=False)


def sample_total(run, snapshot, x):
    """Total displacement of one snapshot at arbitrary points."""
    if run.kind == "vme":
        return total_displacement(run.mesh, snapshot.state.d_c,
                                  snapshot.state.d_f, x)
    return _dns_displacement_at(run.problem, snapshot.state.d, x)


def reference_coords(run):
    """The nodal coordinates a run's total field lives on."""
    if run.kind == "vme":
        return run.mesh.x_f
    return run.problem.node_coords


def relative_error_linf(run_a, run_b, requested_t):
    """max |u_a - u_b| / max |u_b| at one requested time.

    Both runs contribute their snapshot nearest the requested time (they
    must not have drifted more than one step apart), and both fields are
    sampled on run_b's nodal coordinates.
    """
    max_dt = max(run_a.max_dt, run_b.max_dt)
    sa, sb = pair_snapshots(run_a.snapshots, run_b.snapshots, requested_t, max_dt)
    x = reference_coords(run_b)
    u_a = sample_total(run_a, sa, x)
    u_b = sample_total(run_b, sb, x)
    den = float(np.max(np.abs(u_b)))
    if den < DENOM_FLOOR:
        raise ZeroReference("reference displacement is identically zero")
    return float(np.max(np.abs(u_a - u_b))) / den


def find_snapshot(snapshots, requested_t):
    for s in snapshots:
        if abs(s.requested_t - requested_t) <= 1e-12:
            return s
    raise MissingSnapshot(f"no snapshot recorded for requested time {requested_t}")


def pair_snapshots(snaps_a, snaps_b, requested_t, max_dt):
    """The two snapshots for one requested time, refused if they drifted apart.

    max_dt should be the largest step either run took; actual snapshot
    times farther apart than that mean the runs were not sampled together.
    """
    sa = find_snapshot(snaps_a, requested_t)
    sb = find_snapshot(snaps_b, requested_t)
    if abs(sa.t - sb.t) > max_dt + 1e-12:
        raise MissingSnapshot(
            f"snapshots for t = {requested_t} are {abs(sa.t - sb.t):.3e} apart, "
            f"more than one step ({max_dt:.3e})"
        )
    return sa, sb


def nondimensionalize(micro: Microstructure, length=1.0, x=None, t=None, u=None,
                      stress=None):
    """Scale physical values by the domain size and reference wave speed."""
    v = np.sqrt(micro.modulus_a / micro.rho)
    out = []
    if x is not None:
        out.append(np.asarray(x) / length)
    if t is not None:
        out.append(np.asarray(t) * v / length)
    if u is not None:
        out.append(np.asarray(u) / length)
    if stress is not None:
        out.append(np.asarray(stress) / micro.modulus_a)
    return tuple(out) if len(out) != 1 else out[0]


def redimensionalize(micro: Microstructure, length=1.0, x=None, t=None, u=None,
                     stress=None):
    v = np.sqrt(micro.modulus_a / micro.rho)
    out = []
    if x is not None:
        out.append(np.asarray(x) * length)
    if t is not None:
        out.append(np.asarray(t) * length / v)
    if u is not None:
        out.append(np.asarray(u) * length)
    if stress is not None:
        out.append(np.asarray(stress) * micro.modulus_a)
    return tuple(out) if len(out) != 1 else out[0]
