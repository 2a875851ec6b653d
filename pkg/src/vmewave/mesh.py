"""Two-scale 1-D meshes with quadratic elements.

The coarse grid tiles the domain with n_es * n_ecp elements; every
enrichment subdomain (one unit cell) additionally carries n_ef fine
elements, so the global fine grid has n_es * n_ef elements. Both grids
are uniform and compatible: each coarse element contains exactly
r = n_ef / n_ecp fine elements.

Fine-scale fields satisfy homogeneous Dirichlet conditions on every
subdomain boundary (interior ones included), so fine nodal vectors are
stored on the global fine node set with the shared boundary nodes pinned
to zero. There are no exterior traction boundaries in any scenario here.

Quadrature is 3-point Gauss everywhere (exact through degree 5, which
covers the consistent quadratic mass).
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidDiscretization, PointOutsideCoarseElement

__all__ = [
    "GAUSS_XI",
    "GAUSS_W",
    "shape_values",
    "shape_gradients",
    "jacobian",
    "TwoScaleMesh",
    "build_mesh",
    "coarse_parent_coord",
]

GAUSS_XI = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
GAUSS_W = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


def shape_values(xi):
    """Quadratic shape functions on [-1, 1], nodes at xi = -1, 0, +1.

    Returns an array of shape xi.shape + (3,).
    """
    xi = np.asarray(xi, dtype=float)
    return np.stack(
        [xi * (xi - 1.0) / 2.0, 1.0 - xi * xi, xi * (xi + 1.0) / 2.0], axis=-1
    )


def shape_gradients(xi):
    """Parent-coordinate derivatives dN/dxi, same layout as shape_values."""
    xi = np.asarray(xi, dtype=float)
    return np.stack([xi - 0.5, -2.0 * xi, xi + 0.5], axis=-1)


def jacobian(h):
    """Parent-to-physical jacobian of an affine element of length h."""
    return h / 2.0


def coarse_parent_coord(xi_f, j, r):
    """Map a fine-element parent coordinate into the containing coarse element.

    ``j`` is the fine element's position (0-based) within its coarse element
    and ``r`` the number of fine elements per coarse element. For uniform
    compatible grids the composite map M_c^{-1}(M_f(xi_f)) collapses to

        xi_c = (2 j + 1 - r)/r + xi_f / r,

    which is exact (and reduces to the identity bit-for-bit when r = 1).
    """
    xi_f = np.asarray(xi_f, dtype=float)
    if np.any(xi_f < -1.0 - 1e-12) or np.any(xi_f > 1.0 + 1e-12):
        raise PointOutsideCoarseElement("fine parent coordinate outside [-1, 1]")
    if np.any(np.asarray(j) < 0) or np.any(np.asarray(j) >= r):
        raise PointOutsideCoarseElement(
            f"fine element index {j} outside the coarse element (r = {r})"
        )
    return (2.0 * np.asarray(j) + 1.0 - r) / r + xi_f / r


@dataclass(frozen=True, eq=False)
class TwoScaleMesh:
    """Connectivity and geometry for one coarse grid plus its enrichments.

    gather_c        (n_cel, 3) coarse dof ids per coarse element
    gather_f        (n_fel, 3) global fine dof ids per fine element
    gather_c_sub    (n_es, 2 n_ecp + 1) coarse dofs covered by a subdomain
    sub_fine_nodes  (n_es, 2 n_ef + 1) global fine nodes of a subdomain
    fine_constrained global fine node ids pinned to zero (subdomain edges)
    fine_to_coarse  (n_fel,) containing coarse element per fine element
    """

    n_es: int
    n_ecp: int
    n_ef: int
    x0: float
    length: float
    h_c: float
    h_f: float
    x_c: np.ndarray
    x_f: np.ndarray
    gather_c: np.ndarray
    gather_f: np.ndarray
    gather_c_sub: np.ndarray
    sub_fine_nodes: np.ndarray
    fine_constrained: np.ndarray
    fine_to_coarse: np.ndarray
    xi_c_at_fine_quads: np.ndarray  # (n_fel, 3) coarse parent coords of fine gauss pts

    @property
    def r(self):
        return self.n_ef // self.n_ecp

    @property
    def n_cel(self):
        return self.n_es * self.n_ecp

    @property
    def n_fel(self):
        return self.n_es * self.n_ef

    @property
    def n_cdof(self):
        return 2 * self.n_cel + 1

    @property
    def n_fdof(self):
        return 2 * self.n_fel + 1

    @property
    def nfn(self):
        """Fine nodes per subdomain (local vector length)."""
        return 2 * self.n_ef + 1


def build_mesh(n_es, n_ecp=1, n_ef=None, x0=-0.5, length=1.0):
    """Construct a TwoScaleMesh over [x0, x0 + length].

    n_es   enrichment subdomains (unit cells)
    n_ecp  coarse elements per subdomain
    n_ef   fine elements per subdomain; must be a multiple of n_ecp
    """
    if n_ef is None:
        n_ef = n_ecp
    if n_es < 1 or n_ecp < 1:
        raise InvalidDiscretization(
            f"element counts must be positive (n_es={n_es}, n_ecp={n_ecp})"
        )
    if n_ef < n_ecp:
        raise InvalidDiscretization(
            f"n_ef={n_ef} must be at least n_ecp={n_ecp}"
        )
    if n_ef % n_ecp != 0:
        raise InvalidDiscretization(
            f"n_ef={n_ef} must be divisible by n_ecp={n_ecp}"
        )

    n_cel = n_es * n_ecp
    n_fel = n_es * n_ef
    h_c = length / n_cel
    h_f = length / n_fel
    x_c = np.linspace(x0, x0 + length, 2 * n_cel + 1)
    x_f = np.linspace(x0, x0 + length, 2 * n_fel + 1)

    ec = np.arange(n_cel)
    gather_c = np.stack([2 * ec, 2 * ec + 1, 2 * ec + 2], axis=1)
    ef = np.arange(n_fel)
    gather_f = np.stack([2 * ef, 2 * ef + 1, 2 * ef + 2], axis=1)

    sub = np.arange(n_es)
    gather_c_sub = 2 * n_ecp * sub[:, None] + np.arange(2 * n_ecp + 1)[None, :]
    sub_fine_nodes = 2 * n_ef * sub[:, None] + np.arange(2 * n_ef + 1)[None, :]
    fine_constrained = 2 * n_ef * np.arange(n_es + 1)

    fine_to_coarse = ef // (n_ef // n_ecp)
    r = n_ef // n_ecp
    j_in_coarse = ef % r
    xi_c = coarse_parent_coord(GAUSS_XI[None, :], j_in_coarse[:, None], r)

    return TwoScaleMesh(
        n_es=n_es,
        n_ecp=n_ecp,
        n_ef=n_ef,
        x0=x0,
        length=length,
        h_c=h_c,
        h_f=h_f,
        x_c=x_c,
        x_f=x_f,
        gather_c=gather_c,
        gather_f=gather_f,
        gather_c_sub=gather_c_sub,
        sub_fine_nodes=sub_fine_nodes,
        fine_constrained=fine_constrained,
        fine_to_coarse=fine_to_coarse,
        xi_c_at_fine_quads=xi_c,
    )
