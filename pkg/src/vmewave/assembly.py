"""Element tables, mass matrices, coupling blocks and force assembly.

All integrals are evaluated on the fine grid with 3-point Gauss, which is
exact for the consistent quadratic mass and keeps coarse quantities
consistent with material variation inside a coarse element. The coarse
shape functions are tabulated at the fine-grid quadrature points through
the inter-scale parent map, so a matched discretization (one fine element
per coarse element, same counts) reproduces a single-scale computation
bit for bit.

Fine nodal vectors live on the global fine node set; the nodes shared by
neighbouring subdomains are constrained to zero, which realises the
homogeneous boundary condition of the enrichment spaces.
"""

from dataclasses import dataclass, field

import numpy as np

from .material import check_stretch, energy, stress, tangent
from .mesh import GAUSS_W, GAUSS_XI, TwoScaleMesh, jacobian, shape_gradients, shape_values

__all__ = [
    "FieldTables",
    "uniform_tables",
    "coarse_on_fine_tables",
    "Operators",
    "DnsOperators",
    "build_operators",
    "build_dns_operators",
    "field_gradient",
    "assemble_global",
    "internal_forces",
    "dns_internal_force",
    "fine_force_local",
    "fine_tangent_blocks",
    "total_stretch",
    "total_energy",
    "element_average_stretch",
]


@dataclass(frozen=True, eq=False)
class FieldTables:
    """Per-element quadrature tables for one interpolation field.

    idx   (n_el, 3) dof ids of the element's nodes
    N     (n_el, 3, 3) shape values, quadrature point by node
    B     (n_el, 3, 3) physical gradients dN/dX
    wjac  (n_el, 3) quadrature weight times jacobian
    """

    idx: np.ndarray
    N: np.ndarray
    B: np.ndarray
    wjac: np.ndarray
    n_dof: int


def uniform_tables(n_el, length):
    """Tables for a uniform single-scale quadratic grid of n_el elements."""
    h = length / n_el
    jac = jacobian(h)
    N1 = shape_values(GAUSS_XI)
    B1 = shape_gradients(GAUSS_XI) / jac
    e = np.arange(n_el)
    idx = np.stack([2 * e, 2 * e + 1, 2 * e + 2], axis=1)
    return FieldTables(
        idx=idx,
        N=np.tile(N1, (n_el, 1, 1)),
        B=np.tile(B1, (n_el, 1, 1)),
        wjac=np.tile(GAUSS_W * jac, (n_el, 1)),
        n_dof=2 * n_el + 1,
    )


def coarse_on_fine_tables(mesh: TwoScaleMesh):
    """Coarse-field tables evaluated at the fine-grid quadrature points."""
    jac_c = jacobian(mesh.h_c)
    jac_f = jacobian(mesh.h_f)
    xi_c = mesh.xi_c_at_fine_quads
    return FieldTables(
        idx=mesh.gather_c[mesh.fine_to_coarse],
        N=shape_values(xi_c),
        B=shape_gradients(xi_c) / jac_c,
        wjac=np.tile(GAUSS_W * jac_f, (mesh.n_fel, 1)),
        n_dof=mesh.n_cdof,
    )


def _lumped_mass(tables, rho):
    """Row-sum lumped mass (equals the integral of rho * N_a)."""
    m = np.zeros(tables.n_dof)
    m_loc = np.einsum("eq,eqj->ej", tables.wjac * rho, tables.N, optimize=False)
    np.add.at(m, tables.idx, m_loc)
    return m


@dataclass(eq=False)
class Operators:
    """Assembled, time-independent data for one two-scale problem."""

    mesh: TwoScaleMesh
    tf: FieldTables
    tc: FieldTables
    E_el: np.ndarray       # modulus per fine element
    rho: float
    m_c: np.ndarray        # lumped coarse mass, constrained entries set to 1
    m_f: np.ndarray        # lumped fine mass, constrained entries set to 1
    free_c: np.ndarray     # bool, coarse dofs not pinned by boundary conditions
    free_f: np.ndarray     # bool, fine dofs not pinned
    cpl: np.ndarray        # (n_es, 2 n_ecp + 1, nfn) inter-scale mass blocks
    mf_cons: np.ndarray    # (n_es, nfn, nfn) consistent fine mass, pinned rows = identity
    sub_of_el: np.ndarray  # (n_fel,) owning subdomain per fine element
    lf: np.ndarray         # (n_fel, 3) subdomain-local fine node ids

    @property
    def E_q(self):
        return self.E_el[:, None]


def build_operators(mesh: TwoScaleMesh, E_el, rho=1.0):
    """Assemble masses and coupling blocks for a two-scale discretization."""
    E_el = np.asarray(E_el, dtype=float)
    if E_el.shape != (mesh.n_fel,):
        raise ValueError(f"expected modulus per fine element, shape ({mesh.n_fel},)")

    tf = uniform_tables(mesh.n_fel, mesh.length)
    tc = coarse_on_fine_tables(mesh)

    m_c = _lumped_mass(tc, rho)
    m_f = _lumped_mass(tf, rho)

    free_c = np.ones(mesh.n_cdof, dtype=bool)
    free_c[0] = free_c[-1] = False
    free_f = np.ones(mesh.n_fdof, dtype=bool)
    free_f[mesh.fine_constrained] = False
    m_c[~free_c] = 1.0
    m_f[~free_f] = 1.0

    sub_of_el = np.arange(mesh.n_fel) // mesh.n_ef
    lf = tf.idx - (2 * mesh.n_ef) * sub_of_el[:, None]

    # inter-scale consistent mass, one block per subdomain
    lc = tc.idx - (2 * mesh.n_ecp) * sub_of_el[:, None]
    me_cf = np.einsum("eq,eqa,eqb->eab", tf.wjac * rho, tc.N, tf.N, optimize=False)
    cpl = np.zeros((mesh.n_es, 2 * mesh.n_ecp + 1, mesh.nfn))
    np.add.at(
        cpl,
        (sub_of_el[:, None, None], lc[:, :, None], lf[:, None, :]),
        me_cf,
    )

    # consistent fine mass per subdomain, identity on the pinned edge nodes
    me_ff = np.einsum("eq,eqa,eqb->eab", tf.wjac * rho, tf.N, tf.N, optimize=False)
    mf_cons = np.zeros((mesh.n_es, mesh.nfn, mesh.nfn))
    np.add.at(
        mf_cons,
        (sub_of_el[:, None, None], lf[:, :, None], lf[:, None, :]),
        me_ff,
    )
    edge = np.array([0, mesh.nfn - 1])
    mf_cons[:, edge, :] = 0.0
    mf_cons[:, :, edge] = 0.0
    mf_cons[:, edge, edge] = 1.0

    return Operators(
        mesh=mesh,
        tf=tf,
        tc=tc,
        E_el=E_el,
        rho=float(rho),
        m_c=m_c,
        m_f=m_f,
        free_c=free_c,
        free_f=free_f,
        cpl=cpl,
        mf_cons=mf_cons,
        sub_of_el=sub_of_el,
        lf=lf,
    )


@dataclass(eq=False)
class DnsOperators:
    """Assembled data for a single-scale reference discretization."""

    tables: FieldTables
    E_el: np.ndarray
    rho: float
    m: np.ndarray
    free: np.ndarray
    h: float

    @property
    def E_q(self):
        return self.E_el[:, None]


def build_dns_operators(n_el, E_el, rho=1.0, length=1.0):
    E_el = np.asarray(E_el, dtype=float)
    if E_el.shape != (n_el,):
        raise ValueError(f"expected modulus per element, shape ({n_el},)")
    tables = uniform_tables(n_el, length)
    m = _lumped_mass(tables, rho)
    free = np.ones(tables.n_dof, dtype=bool)
    free[0] = free[-1] = False
    m[~free] = 1.0
    return DnsOperators(
        tables=tables, E_el=E_el, rho=float(rho), m=m, free=free, h=length / n_el
    )


def field_gradient(tables, d):
    """du/dX at the quadrature points, shape (n_el, 3)."""
    return np.einsum("eqj,ej->eq", tables.B, d[tables.idx], optimize=False)


def assemble_global(tables, weighted):
    """Scatter sum_q weighted[e, q] * B[e, q, a] into a global vector."""
    f = np.zeros(tables.n_dof)
    f_loc = np.einsum("eqj,eq->ej", tables.B, weighted, optimize=False)
    np.add.at(f, tables.idx, f_loc)
    return f


def total_stretch(ops: Operators, d_c, d_f, where="quadrature points", check=True):
    """Deformation gradient of the combined field at the fine quad points.

    check=False skips the positivity guard; callers probing trial states
    (Newton backtracking) use it and must not evaluate the material there.
    """
    gc = field_gradient(ops.tc, d_c)
    gf = field_gradient(ops.tf, d_f)
    F = (1.0 + gc) + gf
    if check:
        check_stretch(F, where=where)
    return F


def internal_forces(ops: Operators, d_c, d_f):
    """Coarse and fine internal force vectors plus the stretch field.

    Both vectors come from the same first Piola-Kirchhoff stress evaluated
    at the shared quadrature points, tested against each field's gradients.
    """
    F = total_stretch(ops, d_c, d_f)
    w = ops.tf.wjac * stress(ops.E_q, F)
    f_c = assemble_global(ops.tc, w)
    f_f = assemble_global(ops.tf, w)
    return f_c, f_f, F


def dns_internal_force(ops: DnsOperators, d):
    g = field_gradient(ops.tables, d)
    F = 1.0 + g
    check_stretch(F, where="reference grid quadrature points")
    w = ops.tables.wjac * stress(ops.E_q, F)
    return assemble_global(ops.tables, w), F


def fine_force_local(ops: Operators, F):
    """Fine internal force gathered per subdomain, shape (n_es, nfn)."""
    w = ops.tf.wjac * stress(ops.E_q, F)
    f_loc = np.einsum("eqj,eq->ej", ops.tf.B, w, optimize=False)
    out = np.zeros((ops.mesh.n_es, ops.mesh.nfn))
    np.add.at(out, (ops.sub_of_el[:, None], ops.lf), f_loc)
    return out


def fine_tangent_blocks(ops: Operators, F):
    """Fine-scale tangent stiffness per subdomain, pinned rows = identity."""
    D = tangent(ops.E_q, F)
    ke = np.einsum(
        "eq,eqa,eqb->eab", ops.tf.wjac * D, ops.tf.B, ops.tf.B, optimize=False
    )
    K = np.zeros((ops.mesh.n_es, ops.mesh.nfn, ops.mesh.nfn))
    np.add.at(
        K,
        (ops.sub_of_el[:, None, None], ops.lf[:, :, None], ops.lf[:, None, :]),
        ke,
    )
    edge = np.array([0, ops.mesh.nfn - 1])
    K[:, edge, :] = 0.0
    K[:, :, edge] = 0.0
    K[:, edge, edge] = 1.0
    return K


def total_energy(ops: Operators, d_c, d_f, v_c, v_f):
    """Quadrature-evaluated kinetic plus strain energy of the total field."""
    F = total_stretch(ops, d_c, d_f)
    vq = np.einsum(
        "eqj,ej->eq", ops.tc.N, v_c[ops.tc.idx], optimize=False
    ) + np.einsum("eqj,ej->eq", ops.tf.N, v_f[ops.tf.idx], optimize=False)
    dens = 0.5 * ops.rho * vq * vq + energy(ops.E_q, F)
    return float(np.sum(ops.tf.wjac * dens))


def element_average_stretch(wjac, F):
    """Quadrature average of F per element."""
    return np.sum(wjac * F, axis=1) / np.sum(wjac, axis=1)
