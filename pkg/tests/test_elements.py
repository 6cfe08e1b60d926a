import numpy as np
import pytest

from mhdkit.mesh import build_rect_mesh
from mhdkit.elements import (FunctionSpace, Field, ReferenceElement,
                             UnsupportedElementError, interpolate, l2_project,
                             complex_maps, grad_to_hcurl, curl_to_dg,
                             mass_matrix, tabulate)

ALL_FAMILIES = [("CG", 1), ("CG", 2), ("DG", 0), ("DG", 1), ("RT", 1),
                ("RT", 2), ("BDM", 1), ("BDM", 2), ("NED", 1), ("NED", 2)]


@pytest.fixture(scope="module")
def unit_mesh():
    return build_rect_mesh((0, 1, 0, 1), 3, 3, "right")


@pytest.mark.parametrize("fam,deg", ALL_FAMILIES)
def test_reference_duality(fam, deg):
    el = ReferenceElement(fam, deg)
    D = el.dual_matrix()
    assert np.abs(D - np.eye(el.dim)).max() < 1e-12


def test_classical_dimensions():
    assert ReferenceElement("RT", 1).dim == 3
    assert ReferenceElement("RT", 2).dim == 2 * (2 + 2)
    assert ReferenceElement("BDM", 2).dim == (2 + 1) * (2 + 2) == 12
    assert ReferenceElement("NED", 2).dim == 8
    assert ReferenceElement("CG", 2).dim == 6


def test_unsupported_element():
    with pytest.raises(UnsupportedElementError):
        ReferenceElement("RT", 3)


def test_cg1_nodal_at_vertices():
    el = ReferenceElement("CG", 1)
    vals = el.tabulate(np.array([[0, 0], [1, 0], [0, 1]], float))
    assert np.allclose(vals[:, :, 0], np.eye(3))


def test_rt1_edge_moments():
    # integral over edge i of phi_j . n equals delta_ij by construction
    el = ReferenceElement("RT", 1)
    D = el.dual_matrix()
    assert np.abs(D - np.eye(3)).max() < 1e-12


def test_piola_compatibility():
    # contravariant map of the reference basis matches the physical basis up
    # to the diagonal edge-length/orientation scaling of the dual functionals:
    # check div(mapped) = div(reference)/detJ pointwise instead
    ref = ReferenceElement("RT", 2)
    pts = np.array([[0.2, 0.3], [0.1, 0.6], [0.4, 0.4]])
    vals, grads = ref.tabulate(pts, grad=True)
    div_ref = grads[..., 0, 0] + grads[..., 1, 1]
    # affine cell
    J = np.array([[2.0, 0.3], [-0.1, 1.5]])
    detJ = np.linalg.det(J)
    m = build_rect_mesh((0, 1, 0, 1), 1, 1)
    # map reference basis through Piola and differentiate numerically
    eps = 1e-6
    for d in range(2):
        step = np.zeros(2)
        step[d] = eps

        def mapped(p):
            ref_p = np.linalg.solve(J, p.T).T
            v = ref.tabulate(ref_p)
            return np.einsum("ab,qib->qia", J, v) / detJ

        num = (mapped(pts @ J.T + step) - mapped(pts @ J.T - step)) / (2 * eps)
        if d == 0:
            div_num = num[..., 0]
        else:
            div_num += num[..., 1]
    assert np.abs(div_num - div_ref / detJ).max() < 1e-5


@pytest.mark.parametrize("fam,deg", ALL_FAMILIES)
def test_polynomial_reproduction(fam, deg, unit_mesh):
    space = FunctionSpace(unit_mesh, fam, deg)
    k = deg if fam != "DG" else deg
    if space.element.scalar:
        f = lambda x, y: (1 + x + y) ** k if k > 0 else np.ones_like(x)
    else:
        # a polynomial field inside every supported vector space
        if fam in ("RT", "NED") and deg == 1:
            f = lambda x, y: np.stack([1 + 0 * x, 2 + 0 * x], axis=-1)
        else:
            f = lambda x, y: np.stack([1 + x - 2 * y, 0.5 - x + y], axis=-1)
    fld = interpolate(space, f, quad_degree=deg + 6)
    qp, w = space.cell_quadrature(2 * deg + 2)
    vals = fld.eval_cells(np.arange(unit_mesh.num_cells), qp)
    ex = f(qp[..., 0], qp[..., 1])
    if ex.ndim == 2:
        ex = ex[..., None]
    assert np.abs(vals - ex).max() < 1e-12


def test_interpolate_divfree_constant():
    m = build_rect_mesh((0, 1, 0, 1), 4, 4)
    rt2 = FunctionSpace(m, "RT", 2)
    f = lambda x, y: np.stack([np.zeros_like(x), np.ones_like(y)], axis=-1)
    fld = interpolate(rt2, f, quad_degree=8)
    assert _div_l2(fld) < 1e-12


def _div_l2(field):
    sp_ = field.space
    qp, w = sp_.cell_quadrature(2 * sp_.element.degree + 2)
    _, grads = sp_.tabulate_cells(np.arange(sp_.mesh.num_cells), qp, True)
    loc = field.coefficients[sp_.dofmap]
    g = np.einsum("ci,cqikd->cqkd", loc, grads)
    div = g[..., 0, 0] + g[..., 1, 1]
    return np.sqrt(np.sum(div ** 2 * w))


def test_interpolation_quadrature_degree_controls_divergence():
    # trigonometric div-free field (vcurl of sin(2pi x)cos(2pi y)): low-degree
    # edge moments spoil div, high degree restores it to machine precision
    m = build_rect_mesh((-0.5, 0.5, -0.5, 0.5), 16, 16)
    rt2 = FunctionSpace(m, "RT", 2)

    def Bdf(x, y):
        return np.stack([-np.pi * np.sin(np.pi * x) * np.sin(np.pi * y),
                         -np.pi * np.cos(np.pi * x) * np.cos(np.pi * y)],
                        axis=-1)

    low = interpolate(rt2, Bdf, quad_degree=2)
    high = interpolate(rt2, Bdf, quad_degree=8)
    dlow = _div_l2(low)
    dhigh = _div_l2(high)
    assert dhigh < 1e-10
    assert dlow > 1e-5
    assert dlow / max(dhigh, 1e-16) > 1e4


def test_l2_project_idempotent(unit_mesh):
    rng = np.random.default_rng(3)
    for fam, deg in [("CG", 2), ("RT", 2), ("NED", 1), ("DG", 1)]:
        space = FunctionSpace(unit_mesh, fam, deg)
        fld = Field(space, rng.standard_normal(space.total_dofs))
        proj = l2_project(space, fld)
        assert np.abs(proj.coefficients - fld.coefficients).max() < 1e-10


def test_l2_project_between_spaces_constants(unit_mesh):
    rt = FunctionSpace(unit_mesh, "RT", 2)
    ned = FunctionSpace(unit_mesh, "NED", 2)
    const = interpolate(rt, lambda x, y: np.stack(
        [np.full_like(x, 0.7), np.full_like(x, -0.2)], axis=-1), 8)
    to_ned = l2_project(ned, const)
    back = l2_project(rt, to_ned)
    assert np.abs(back.coefficients - const.coefficients).max() < 1e-10


def test_l2_project_nonexpansive(unit_mesh):
    rng = np.random.default_rng(7)
    rt = FunctionSpace(unit_mesh, "RT", 2)
    ned = FunctionSpace(unit_mesh, "NED", 2)
    Mrt = mass_matrix(rt)
    Mned = mass_matrix(ned)
    f = Field(rt, rng.standard_normal(rt.total_dofs))
    p = l2_project(ned, f)
    nf = np.sqrt(f.coefficients @ (Mrt @ f.coefficients))
    np_ = np.sqrt(p.coefficients @ (Mned @ p.coefficients))
    assert np_ <= nf + 1e-12


def test_complex_maps_exactness(unit_mesh):
    cg = FunctionSpace(unit_mesh, "CG", 2)
    rt = FunctionSpace(unit_mesh, "RT", 2)
    dg = FunctionSpace(unit_mesh, "DG", 1)
    V, D = complex_maps(cg, rt, dg)
    prod = np.abs((D @ V)).max()
    assert prod < 1e-12
    # vcurl of constant CG field vanishes
    const = np.ones(cg.total_dofs)
    assert np.abs(V @ const).max() < 1e-12
    # with B.n = 0 constrained, div maps onto the mean-zero part of DG:
    # rank = dim DG - 1 on a simply connected 2x2 mesh
    m2 = build_rect_mesh((0, 1, 0, 1), 2, 2)
    cg2, rt2, dg2 = (FunctionSpace(m2, f, d)
                     for f, d in [("CG", 2), ("RT", 2), ("DG", 1)])
    _, D2 = complex_maps(cg2, rt2, dg2)
    free = np.setdiff1d(np.arange(rt2.total_dofs), rt2.boundary_dofs())
    rank = np.linalg.matrix_rank(D2.toarray()[:, free], tol=1e-9)
    assert rank == dg2.total_dofs - 1


def test_grad_and_curl_maps(unit_mesh):
    cg = FunctionSpace(unit_mesh, "CG", 1)
    ned = FunctionSpace(unit_mesh, "NED", 1)
    dg = FunctionSpace(unit_mesh, "DG", 0)
    G = grad_to_hcurl(cg, ned)
    C = curl_to_dg(ned, dg)
    assert np.abs((C @ G)).max() < 1e-12


def test_mass_traversal_order_independent(unit_mesh):
    # the dof functionals are global, so assembling from a permuted cell
    # ordering gives the same matrix up to renumbering of cell-interior dofs
    rt = FunctionSpace(unit_mesh, "RT", 2)
    M1 = mass_matrix(rt)
    perm = np.random.default_rng(0).permutation(unit_mesh.num_cells)
    from mhdkit.mesh import Mesh2D
    m2 = Mesh2D(unit_mesh.vertices, unit_mesh.cells[perm],
                cell_coords=unit_mesh.cell_coords[perm])
    rt2 = FunctionSpace(m2, "RT", 2)
    M2 = mass_matrix(rt2)
    npc = rt.element.n_cell
    dofmap = np.arange(rt.total_dofs)
    for new_c, old_c in enumerate(perm):
        for j in range(npc):
            dofmap[rt.cell_offset + old_c * npc + j] = \
                rt2.cell_offset + new_c * npc + j
    import scipy.sparse as sp
    P = sp.coo_matrix((np.ones(rt.total_dofs),
                       (dofmap, np.arange(rt.total_dofs)))).tocsr()
    M2_mapped = P.T @ M2 @ P
    assert np.abs((M1 - M2_mapped)).max() < 1e-13


def test_boundary_dofs(unit_mesh):
    bdm = FunctionSpace(unit_mesh, "BDM", 2)
    top = bdm.boundary_dofs(["top"])
    # 3 moments per boundary edge on the top: 3 edges * 3
    assert len(top) == 9
    cg = FunctionSpace(unit_mesh, "CG", 2)
    allb = cg.boundary_dofs()
    # 12 boundary vertices + 12 boundary edges
    assert len(allb) == 24


def test_tabulate_module_level():
    pts = np.array([[0.25, 0.25]])
    vals = tabulate(("CG", 1), pts)
    assert np.allclose(vals[:, :, 0].sum(), 1.0)
