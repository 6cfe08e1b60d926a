"""Reference elements, function spaces, dof maps, interpolation and the
discrete differential-complex maps (CG -vcurl-> RT -div-> DG and the rotated
H(curl) family).

Basis functions are constructed cell by cell in physical coordinates: on each
cell the local basis is the dual of a set of *globally defined* functionals
(point evaluations, edge moments taken along the global low-to-high edge
direction, interior moments).  Shared functionals then automatically produce
normal/tangential continuity without any sign bookkeeping, and the same
machinery evaluates traces of a cell's basis at arbitrary physical points,
which is what the facet assembly needs.
"""

import numpy as np

from .quadrature import gauss_interval, triangle_rule

SUPPORTED = {
    ("CG", 1), ("CG", 2), ("DG", 0), ("DG", 1), ("VCG", 1), ("VCG", 2),
    ("RT", 1), ("RT", 2), ("BDM", 1), ("BDM", 2), ("NED", 1), ("NED", 2),
}


class UnsupportedElementError(Exception):
    pass


# -- scalar monomials ------------------------------------------------------

def _mono_exponents(dmax):
    return [(a, b) for d in range(dmax + 1) for a in range(d, -1, -1)
            for b in [d - a]]


def scalar_monomials(u, dmax, grad=False):
    """Evaluate monomials u^a v^b (total degree <= dmax) at local points
    u[..., 2].  Returns (..., nsm) values and optionally (..., nsm, 2)
    derivatives with respect to the *local* coordinates."""
    exps = _mono_exponents(dmax)
    x = u[..., 0]
    y = u[..., 1]
    vals = np.stack([x ** a * y ** b for a, b in exps], axis=-1)
    if not grad:
        return vals, None
    gx = np.stack([a * x ** max(a - 1, 0) * y ** b for a, b in exps], axis=-1)
    gy = np.stack([b * x ** a * y ** max(b - 1, 0) for a, b in exps], axis=-1)
    return vals, np.stack([gx, gy], axis=-1)


def _legendre(m, s):
    if m == 0:
        return np.ones_like(s)
    if m == 1:
        return s
    if m == 2:
        return 1.5 * s * s - 0.5
    raise ValueError(m)


# -- element descriptions ----------------------------------------------------

class ElementFamily:
    """Monomial span plus dual-functional layout for one (family, degree)."""

    def __init__(self, family, degree):
        if (family, degree) not in SUPPORTED:
            raise UnsupportedElementError(f"{family}{degree}")
        self.family = family
        self.degree = degree
        self.scalar = family in ("CG", "DG")
        self.nodal = family in ("CG", "DG", "VCG")
        self.ncomp = 1 if self.scalar else 2
        self._build_span()
        self._build_duals()
        assert self.nloc == len(self.vmono)

    def _build_span(self):
        fam, k = self.family, self.degree
        if fam in ("CG", "DG"):
            self.dmax = k
            exps = _mono_exponents(k)
            nsm = len(exps)
            vm = np.zeros((nsm, 1, nsm))
            for i in range(nsm):
                vm[i, 0, i] = 1.0
            self.vmono = vm
        elif fam in ("BDM", "VCG"):
            self.dmax = k
            exps = _mono_exponents(k)
            nsm = len(exps)
            vm = np.zeros((2 * nsm, 2, nsm))
            for i in range(nsm):
                vm[2 * i, 0, i] = 1.0
                vm[2 * i + 1, 1, i] = 1.0
            self.vmono = vm
        elif fam in ("RT", "NED"):
            self.dmax = k
            exps = _mono_exponents(k)
            nsm = len(exps)
            idx = {e: i for i, e in enumerate(exps)}
            base = _mono_exponents(k - 1)
            rows = []
            for e in base:
                for comp in (0, 1):
                    r = np.zeros((2, nsm))
                    r[comp, idx[e]] = 1.0
                    rows.append(r)
            # x * homogeneous(k-1)  (RT); rotated (-y, x) * hom (NED)
            for a in range(k - 1, -1, -1):
                b = k - 1 - a
                r = np.zeros((2, nsm))
                if fam == "RT":
                    r[0, idx[(a + 1, b)]] = 1.0
                    r[1, idx[(a, b + 1)]] = 1.0
                else:
                    r[0, idx[(a, b + 1)]] = -1.0
                    r[1, idx[(a + 1, b)]] = 1.0
                rows.append(r)
            self.vmono = np.array(rows)
        self.nsm = self.vmono.shape[2]

    def _build_duals(self):
        fam, k = self.family, self.degree
        if fam == "CG":
            self.n_vertex = 1
            self.n_edge = k - 1
            self.n_cell = 0
        elif fam == "VCG":
            self.n_vertex = 2
            self.n_edge = 2 * (k - 1)
            self.n_cell = 0
        elif fam == "DG":
            self.n_vertex = 0
            self.n_edge = 0
            self.n_cell = (k + 1) * (k + 2) // 2
        elif fam in ("RT", "NED"):
            self.n_vertex = 0
            self.n_edge = k
            self.n_cell = 2 * (k - 1)
        elif fam == "BDM":
            self.n_vertex = 0
            self.n_edge = k + 1
            self.n_cell = 3 * (k - 1)
        self.nloc = 3 * self.n_vertex + 3 * self.n_edge + self.n_cell

    @property
    def edge_trace_component(self):
        """'normal' or 'tangent' for vector families."""
        if self.family in ("RT", "BDM"):
            return "normal"
        if self.family == "NED":
            return "tangent"
        return None


class FunctionSpace:
    """A finite element space over a Mesh2D with global dof numbering
    (vertex block, then edge block, then cell block)."""

    def __init__(self, mesh, family, degree):
        self.mesh = mesh
        self.element = ElementFamily(family, degree)
        el = self.element
        nv, ne, nc = mesh.num_vertices, mesh.num_edges, mesh.num_cells
        self.vertex_offset = 0
        self.edge_offset = el.n_vertex * nv
        self.cell_offset = self.edge_offset + el.n_edge * ne
        self.total_dofs = self.cell_offset + el.n_cell * nc
        self._build_geometry()
        self._build_dofmap()
        self._build_coefficients()
        self._basis_cache = {}

    # geometry helpers ------------------------------------------------------

    def _build_geometry(self):
        m = self.mesh
        p = m.cell_coords
        self.cell_centers = p.mean(axis=1)
        e = np.stack([p[:, 2] - p[:, 1], p[:, 2] - p[:, 0], p[:, 1] - p[:, 0]],
                     axis=1)
        self.cell_scale = np.linalg.norm(e, axis=2).max(axis=1)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        self.cell_area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        # per (cell, local edge): endpoints ordered along global direction
        from .mesh import _LOCAL_EDGE_VERTICES
        coords = p[:, _LOCAL_EDGE_VERTICES]          # (nc, 3, 2pts, 2)
        cv = m.cells[:, _LOCAL_EDGE_VERTICES]        # (nc, 3, 2)
        glob = m.edges[m.cell_edges]                 # (nc, 3, 2)
        swap = cv[:, :, 0] != glob[:, :, 0]
        ordered = coords.copy()
        ordered[swap] = coords[swap][:, ::-1]
        self.cell_edge_points = ordered              # global-direction order
        t = ordered[:, :, 1] - ordered[:, :, 0]
        L = np.linalg.norm(t, axis=2)
        t = t / L[..., None]
        self.cell_edge_len = L
        self.cell_edge_tangent = t
        self.cell_edge_normal = np.stack([t[..., 1], -t[..., 0]], axis=-1)

    def local_coords(self, cells, pts):
        return ((pts - self.cell_centers[cells][:, None, :])
                / self.cell_scale[cells][:, None, None])

    # dofmap ------------------------------------------------------------------

    def _build_dofmap(self):
        el = self.element
        m = self.mesh
        nc = m.num_cells
        cols = []
        for lv in range(3):
            for j in range(el.n_vertex):
                cols.append(self.vertex_offset + m.cells[:, lv] * el.n_vertex + j)
        for le in range(3):
            for j in range(el.n_edge):
                cols.append(self.edge_offset + m.cell_edges[:, le] * el.n_edge + j)
        for j in range(el.n_cell):
            cols.append(self.cell_offset + np.arange(nc) * el.n_cell + j)
        self.dofmap = (np.stack(cols, axis=1) if cols
                       else np.zeros((nc, 0), dtype=np.int64))

    # dual functionals -------------------------------------------------------

    def dual_points_weights(self, cells=None, edge_degree=None, cell_degree=None):
        """Quadrature representation of each cell's dual functionals.

        Returns (points (n, nQ, 2), weights (n, nQ, nloc, ncomp)) such that
        l_{c,i}(f) = sum_q weights[c,q,i,:] . f(points[c,q]).
        """
        el = self.element
        m = self.mesh
        if cells is None:
            cells = np.arange(m.num_cells)
        cells = np.asarray(cells)
        n = len(cells)
        if edge_degree is None:
            edge_degree = 2 * el.degree + 1
        if cell_degree is None:
            cell_degree = 2 * el.degree

        pts_list = []
        wts_list = []
        nloc = el.nloc
        if el.n_vertex:
            p = m.cell_coords[cells]                      # (n,3,2)
            w = np.zeros((n, 3, nloc, el.ncomp))
            for lv in range(3):
                for j in range(el.n_vertex):
                    comp = j if el.ncomp > 1 else 0
                    w[:, lv, lv * el.n_vertex + j, comp] = 1.0
            pts_list.append(p)
            wts_list.append(w)
        if el.n_edge:
            if el.nodal:
                # CG/VCG edge midpoint evaluations
                mids = self.cell_edge_points[cells].mean(axis=2)  # (n,3,2)
                w = np.zeros((n, 3, nloc, el.ncomp))
                base = 3 * el.n_vertex
                for le in range(3):
                    for j in range(el.n_edge):
                        comp = j if el.ncomp > 1 else 0
                        w[:, le, base + le * el.n_edge + j, comp] = 1.0
                pts_list.append(mids)
                wts_list.append(w)
            else:
                rule = gauss_interval(edge_degree)
                xi = rule.points
                nq = len(xi)
                ep = self.cell_edge_points[cells]             # (n,3,2,2)
                pts = (ep[:, :, 0, None, :] * (1 - xi)[None, None, :, None]
                       + ep[:, :, 1, None, :] * xi[None, None, :, None])
                L = self.cell_edge_len[cells]                 # (n,3)
                if el.edge_trace_component == "normal":
                    direc = self.cell_edge_normal[cells]      # (n,3,2)
                else:
                    direc = self.cell_edge_tangent[cells]
                s = 2.0 * xi - 1.0
                w = np.zeros((n, 3, nq, nloc, 2))
                base = 3 * el.n_vertex
                for le in range(3):
                    for mdeg in range(el.n_edge):
                        i = base + le * el.n_edge + mdeg
                        leg = _legendre(mdeg, s)
                        w[:, le, :, i, :] = (rule.weights[None, :, None]
                                             * leg[None, :, None]
                                             * L[:, le, None, None]
                                             * direc[:, le, None, :])
                pts_list.append(pts.reshape(n, 3 * nq, 2))
                wts_list.append(w.reshape(n, 3 * nq, nloc, 2))
        if el.n_cell:
            rule = triangle_rule(cell_degree)
            ref = rule.points
            p = m.cell_coords[cells]
            pts = (p[:, None, 0, :]
                   + ref[None, :, 0:1] * (p[:, None, 1, :] - p[:, None, 0, :])
                   + ref[None, :, 1:2] * (p[:, None, 2, :] - p[:, None, 0, :]))
            jac = 2.0 * self.cell_area[cells]
            wq = rule.weights[None, :] * jac[:, None]
            nq = len(ref)
            w = np.zeros((n, nq, nloc, el.ncomp))
            base = 3 * (el.n_vertex + el.n_edge)
            if el.scalar:
                # DG: nodal at mapped reference nodes -> use point evals
                if el.family == "DG" and el.degree == 0:
                    c = p.mean(axis=1)[:, None, :]
                    w = np.zeros((n, 1, nloc, 1))
                    w[:, 0, base, 0] = 1.0
                    pts_list.append(c)
                    wts_list.append(w)
                elif el.family == "DG" and el.degree == 1:
                    w = np.zeros((n, 3, nloc, 1))
                    for j in range(3):
                        w[:, j, base + j, 0] = 1.0
                    pts_list.append(p)
                    wts_list.append(w)
            else:
                mom = []
                mom.append(lambda x, c, h: np.broadcast_to(
                    np.array([1.0, 0.0]), x.shape))
                mom.append(lambda x, c, h: np.broadcast_to(
                    np.array([0.0, 1.0]), x.shape))
                if el.family == "BDM":
                    def rot(x, c, h):
                        u = (x - c[:, None, :]) / h[:, None, None]
                        return np.stack([-u[..., 1], u[..., 0]], axis=-1)
                    mom.append(rot)
                for j, fn in enumerate(mom[:el.n_cell]):
                    r = fn(pts, self.cell_centers[cells], self.cell_scale[cells])
                    w[:, :, base + j, :] = wq[:, :, None] * r
                pts_list.append(pts)
                wts_list.append(w)
        points = np.concatenate(pts_list, axis=1)
        weights = np.concatenate(wts_list, axis=1)
        return points, weights

    # basis coefficients -----------------------------------------------------

    def _build_coefficients(self):
        el = self.element
        nc = self.mesh.num_cells
        pts, wts = self.dual_points_weights()
        u = self.local_coords(np.arange(nc), pts)
        sm, _ = scalar_monomials(u, el.dmax)
        mono_vals = np.einsum("vks,cqs->cqvk", el.vmono, sm)
        D = np.einsum("cqik,cqvk->civ", wts, mono_vals)
        try:
            self.coeff = np.linalg.inv(D).transpose(0, 2, 1)
        except np.linalg.LinAlgError as exc:
            raise UnsupportedElementError(
                f"dual basis of {el.family}{el.degree} is singular") from exc
        # coeff: (nc, nloc, nvm) with basis_i = sum_v coeff[c,i,v] vmono_v

    # evaluation ---------------------------------------------------------------

    def tabulate_cells(self, cells, pts, grad=False):
        """Basis values (n, nq, nloc, ncomp) (and gradients
        (n, nq, nloc, ncomp, 2)) at physical points pts (n, nq, 2)."""
        el = self.element
        cells = np.asarray(cells)
        u = self.local_coords(cells, pts)
        sm, smg = scalar_monomials(u, el.dmax, grad)
        mono_vals = np.einsum("vks,cqs->cqvk", el.vmono, sm)
        vals = np.einsum("civ,cqvk->cqik", self.coeff[cells], mono_vals)
        if not grad:
            return vals, None
        mono_grads = np.einsum("vks,cqsd->cqvkd", el.vmono, smg)
        grads = np.einsum("civ,cqvkd->cqikd", self.coeff[cells], mono_grads)
        grads /= self.cell_scale[cells][:, None, None, None, None]
        return vals, grads

    def cell_quadrature(self, degree):
        """Physical quadrature points and weights on every cell."""
        rule = triangle_rule(degree)
        p = self.mesh.cell_coords
        ref = rule.points
        pts = (p[:, None, 0, :]
               + ref[None, :, 0:1] * (p[:, None, 1, :] - p[:, None, 0, :])
               + ref[None, :, 1:2] * (p[:, None, 2, :] - p[:, None, 0, :]))
        w = rule.weights[None, :] * (2.0 * self.cell_area)[:, None]
        return pts, w

    def basis_at_quadrature(self, degree, grad=False):
        key = (degree, grad)
        if key not in self._basis_cache:
            pts, w = self.cell_quadrature(degree)
            vals, grads = self.tabulate_cells(
                np.arange(self.mesh.num_cells), pts, grad)
            self._basis_cache[key] = (pts, w, vals, grads)
        return self._basis_cache[key]

    # boundary dofs -------------------------------------------------------------

    def boundary_dofs(self, markers=None):
        """Global dofs whose functionals are supported on marked boundary
        edges (all boundary edges if markers is None)."""
        m = self.mesh
        el = self.element
        if markers is None:
            edges = m.boundary_edges
        else:
            edges = np.intersect1d(m.boundary_edges,
                                   m.edges_with_markers(markers))
        dofs = []
        if el.n_vertex:
            verts = np.unique(m.edges[edges].ravel())
            for j in range(el.n_vertex):
                dofs.append(self.vertex_offset + verts * el.n_vertex + j)
        if el.n_edge:
            for j in range(el.n_edge):
                dofs.append(self.edge_offset + edges * el.n_edge + j)
        if dofs:
            return np.unique(np.concatenate(dofs))
        return np.zeros(0, dtype=np.int64)

    def boundary_dof_values(self, g, markers=None, quad_degree=None):
        """Interpolate boundary data onto the boundary dofs of the marked
        edges using edge quadrature of exactness `quad_degree`."""
        m = self.mesh
        el = self.element
        if markers is None:
            edges = m.boundary_edges
        else:
            edges = np.intersect1d(m.boundary_edges,
                                   m.edges_with_markers(markers))
        if quad_degree is None:
            quad_degree = el.degree
        idx_list = []
        val_list = []
        if el.n_vertex:
            verts = np.unique(m.edges[edges].ravel())
            gv = _eval_pointwise(g, m.vertices[verts])
            for j in range(el.n_vertex):
                idx_list.append(self.vertex_offset + verts * el.n_vertex + j)
                val_list.append(gv[:, j if el.ncomp > 1 else 0])
            if el.n_edge:  # CG/VCG midpoints
                ep = m.vertices[m.edges[edges]]
                mids = ep.mean(axis=1)
                gm = _eval_pointwise(g, mids)
                for j in range(el.n_edge):
                    idx_list.append(self.edge_offset + edges * el.n_edge + j)
                    val_list.append(gm[:, j if el.ncomp > 1 else 0])
        elif el.n_edge:
            rule = gauss_interval(quad_degree)
            xi = rule.points
            side_pts = m.edge_endpoints_in_cell(edges, 0)
            pts = (side_pts[:, None, 0, :] * (1 - xi)[None, :, None]
                   + side_pts[:, None, 1, :] * xi[None, :, None])
            t = side_pts[:, 1] - side_pts[:, 0]
            L = np.linalg.norm(t, axis=1)
            t = t / L[:, None]
            direc = (np.stack([t[:, 1], -t[:, 0]], axis=-1)
                     if el.edge_trace_component == "normal" else t)
            gvals = _eval_pointwise(g, pts.reshape(-1, 2)).reshape(
                len(edges), len(xi), -1)
            comp = np.einsum("eqk,ek->eq", gvals, direc)
            s = 2 * xi - 1
            for mdeg in range(el.n_edge):
                leg = _legendre(mdeg, s)
                mom = np.einsum("q,eq->e", rule.weights * 1.0,
                                comp * leg[None, :]) * L
                idx_list.append(self.edge_offset + edges * el.n_edge + mdeg)
                val_list.append(mom)
        if not idx_list:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        idx = np.concatenate(idx_list)
        vals = np.concatenate(val_list)
        # moments are duals of the basis: dof value = functional applied to g
        return idx, vals


def _eval_pointwise(g, pts):
    out = np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float)
    if out.ndim == 1:
        out = out[:, None]
    elif out.ndim == 2 and out.shape[0] in (1, 2) and out.shape[0] != len(pts):
        out = np.moveaxis(out, 0, -1)
    return out


class Field:
    """Coefficient vector over a FunctionSpace."""

    def __init__(self, space, coefficients=None):
        self.space = space
        if coefficients is None:
            coefficients = np.zeros(space.total_dofs)
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (space.total_dofs,):
            raise ValueError("coefficient length does not match space")
        self.coefficients = coefficients

    def eval_cells(self, cells, pts, grad=False):
        vals, grads = self.space.tabulate_cells(cells, pts, grad)
        loc = self.coefficients[self.space.dofmap[cells]]
        out = np.einsum("ci,cqik->cqk", loc, vals)
        if grad:
            gout = np.einsum("ci,cqikd->cqkd", loc, grads)
            return out, gout
        return out

    def copy(self):
        return Field(self.space, self.coefficients.copy())


# -- interpolation / projection ----------------------------------------------


def interpolate(space, f, quad_degree=None):
    """Interpolate a pointwise function via the dual functionals, evaluated
    with quadrature of exactness `quad_degree` (default degree + 6)."""
    el = space.element
    if quad_degree is None:
        quad_degree = el.degree + 6
    pts, wts = space.dual_points_weights(
        edge_degree=quad_degree, cell_degree=quad_degree)
    shp = pts.shape
    fv = _eval_pointwise(f, pts.reshape(-1, 2)).reshape(shp[0], shp[1], -1)
    local = np.einsum("cqik,cqk->ci", wts, fv)
    out = np.zeros(space.total_dofs)
    # "set" semantics; shared functionals agree across cells
    out[space.dofmap.ravel()] = local.ravel()
    return Field(space, out)


def mass_matrix(space, degree=None):
    import scipy.sparse as sp

    el = space.element
    if degree is None:
        degree = 2 * el.degree + 2
    _, w, vals, _ = space.basis_at_quadrature(degree)
    local = np.einsum("cqik,cqjk,cq->cij", vals, vals, w)
    dm = space.dofmap
    nloc = dm.shape[1]
    rows = np.repeat(dm, nloc, axis=1).ravel()
    cols = np.tile(dm, (1, nloc)).ravel()
    M = sp.coo_matrix((local.ravel(), (rows, cols)),
                      shape=(space.total_dofs, space.total_dofs))
    return M.tocsr()


def l2_project(space, source, quad_degree=None):
    """L2 projection of a Field or pointwise function onto `space`."""
    import scipy.sparse.linalg as spla

    el = space.element
    if quad_degree is None:
        quad_degree = 2 * el.degree + 2
    pts, w, vals, _ = space.basis_at_quadrature(quad_degree)
    if isinstance(source, Field):
        sv = source.eval_cells(np.arange(space.mesh.num_cells), pts)
    else:
        shp = pts.shape
        sv = _eval_pointwise(source, pts.reshape(-1, 2)).reshape(
            shp[0], shp[1], -1)
    if sv.shape[-1] != el.ncomp:
        raise ValueError("source component count does not match space")
    rhs_loc = np.einsum("cqik,cqk,cq->ci", vals, sv, w)
    b = np.zeros(space.total_dofs)
    np.add.at(b, space.dofmap.ravel(), rhs_loc.ravel())
    M = mass_matrix(space, quad_degree)
    x = spla.spsolve(M.tocsc(), b)
    return Field(space, x)


def complex_maps(cg, rt, dg):
    """Coefficient matrices of vcurl: CG_k -> RT_k and div: RT_k -> DG_{k-1}.

    Exact on coefficients because the spaces are drawn from one discrete
    complex; built by applying the target space's dual functionals to the
    mapped basis functions.
    """
    if not (cg.element.family == "CG" and rt.element.family == "RT"
            and dg.element.family == "DG"):
        raise ValueError("expected (CG, RT, DG) spaces")
    if not (cg.element.degree == rt.element.degree
            == dg.element.degree + 1):
        raise ValueError("incompatible degrees for the discrete complex")
    V = _map_matrix(cg, rt, op="vcurl")
    D = _map_matrix(rt, dg, op="div")
    return V, D


def grad_to_hcurl(cg, ned):
    """Coefficient matrix of grad: CG_k -> NED_k."""
    if cg.element.degree != ned.element.degree:
        raise ValueError("incompatible degrees")
    return _map_matrix(cg, ned, op="grad")


def curl_to_dg(ned, dg):
    """Coefficient matrix of curl: NED_k -> DG_{k-1}."""
    if ned.element.degree != dg.element.degree + 1:
        raise ValueError("incompatible degrees")
    return _map_matrix(ned, dg, op="curl")


def _map_matrix(src, dst, op):
    import scipy.sparse as sp

    nc = src.mesh.num_cells
    cells = np.arange(nc)
    pts, wts = dst.dual_points_weights()
    _, grads = src.tabulate_cells(cells, pts, grad=True)
    if op == "vcurl":
        mapped = np.stack([grads[..., 0, 1], -grads[..., 0, 0]], axis=-1)
    elif op == "grad":
        mapped = np.stack([grads[..., 0, 0], grads[..., 0, 1]], axis=-1)
    elif op == "div":
        mapped = (grads[..., 0, 0] + grads[..., 1, 1])[..., None]
    elif op == "curl":
        mapped = (grads[..., 1, 0] - grads[..., 0, 1])[..., None]
    local = np.einsum("cqik,cqjk->cij", wts, mapped)
    rows = np.repeat(dst.dofmap, src.dofmap.shape[1], axis=1).ravel()
    cols = np.tile(src.dofmap, (1, dst.dofmap.shape[1])).ravel()
    # shared target dofs receive identical values from both cells: use "set"
    order = np.argsort(rows, kind="stable")
    r, c, v = rows[order], cols[order], local.ravel()[order]
    key = r * (src.total_dofs + 1) + c
    _, first = np.unique(key, return_index=True)
    M = sp.coo_matrix((v[first], (r[first], c[first])),
                      shape=(dst.total_dofs, src.total_dofs))
    M = M.tocsr()
    M.data[np.abs(M.data) < 1e-13] = 0.0
    M.eliminate_zeros()
    return M


# -- reference element view ---------------------------------------------------

_REF_MESH = None


def _reference_mesh():
    global _REF_MESH
    if _REF_MESH is None:
        from .mesh import Mesh2D
        _REF_MESH = Mesh2D(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                           np.array([[0, 1, 2]]))
        _REF_MESH.mark_boundary()
    return _REF_MESH


class ReferenceElement:
    """Single-cell view of an element family on the reference triangle."""

    PIOLA = {"RT": "contravariant", "BDM": "contravariant",
             "NED": "covariant", "CG": None, "DG": None, "VCG": None}

    def __init__(self, family, degree):
        self.family = family
        self.degree = degree
        self.space = FunctionSpace(_reference_mesh(), family, degree)
        el = self.space.element
        self.value_shape = "scalar" if el.scalar else "vector2"
        self.dofs_per_entity = (el.n_vertex, el.n_edge, el.n_cell)
        self.dim = el.nloc
        self.piola = self.PIOLA[family]

    def tabulate(self, points, grad=False):
        pts = np.asarray(points, dtype=float)[None, :, :]
        vals, grads = self.space.tabulate_cells([0], pts, grad)
        if grad:
            return vals[0], grads[0]
        return vals[0]

    def dual_matrix(self):
        pts, wts = self.space.dual_points_weights()
        vals, _ = self.space.tabulate_cells([0], pts[0:1])
        return np.einsum("qik,qjk->ij", wts[0], vals[0])


def tabulate(element, points, grad=False):
    """Module-level convenience wrapper over ReferenceElement.tabulate."""
    if not isinstance(element, ReferenceElement):
        element = ReferenceElement(*element)
    return element.tabulate(points, grad)
