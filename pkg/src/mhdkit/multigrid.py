"""Geometric multigrid over nested mesh hierarchies: exact-embedding
prolongation, vertex-star additive-Schwarz patch relaxation wrapped in a few
GMRES iterations as the smoother, Galerkin coarse operators and a direct
coarse solve.  Works monolithically on any ordered tuple of fields."""

import logging

import numpy as np
import scipy.sparse as sp

from .elements import FunctionSpace
from .linalg import LuSolver, fgmres

log = logging.getLogger(__name__)


def build_transfer(coarse_space, fine_space, child_map):
    """Prolongation matrix embedding the coarse space exactly into the fine
    space of a nested uniform refinement (restriction is the transpose)."""
    if coarse_space.element.family != fine_space.element.family or \
            coarse_space.element.degree != fine_space.element.degree:
        raise ValueError("transfer requires matching element families")
    if child_map.shape[0] != coarse_space.mesh.num_cells:
        raise ValueError("hierarchy is not nested with these spaces")
    ncoarse = coarse_space.mesh.num_cells
    children = child_map.ravel()
    parents = np.repeat(np.arange(ncoarse), 4)
    pts, wts = fine_space.dual_points_weights(cells=children)
    vals, _ = coarse_space.tabulate_cells(parents, pts)
    local = np.einsum("cqik,cqjk->cij", wts, vals)
    rows = fine_space.dofmap[children]
    cols = coarse_space.dofmap[parents]
    nf = rows.shape[1]
    ncl = cols.shape[1]
    R = np.repeat(rows, ncl, axis=1).ravel()
    C = np.tile(cols, (1, nf)).ravel()
    V = local.reshape(-1)
    key = R.astype(np.int64) * coarse_space.total_dofs + C
    order = np.argsort(key, kind="stable")
    key = key[order]
    first = np.ones(len(key), dtype=bool)
    first[1:] = key[1:] != key[:-1]
    P = sp.coo_matrix((V[order][first], (R[order][first], C[order][first])),
                      shape=(fine_space.total_dofs, coarse_space.total_dofs))
    P = P.tocsr()
    P.data[np.abs(P.data) < 1e-12] = 0.0
    P.eliminate_zeros()
    return P


def star_patches(spaces, constrained=None):
    """Vertex-star patch index sets over a tuple of FunctionSpaces sharing one
    mesh.  Patch i collects, for every space, the dofs attached to vertex i,
    to the edges meeting i and to the cells meeting i (their basis functions
    are supported inside the star); constrained dofs are excluded and empty
    patches dropped."""
    mesh = spaces[0].mesh
    nv = mesh.num_vertices
    v2e = [[] for _ in range(nv)]
    for e, (a, b) in enumerate(mesh.edges):
        v2e[a].append(e)
        v2e[b].append(e)
    v2c = [[] for _ in range(nv)]
    for c, vs in enumerate(mesh.cells):
        for v in vs:
            v2c[v].append(c)
    offsets = np.cumsum([0] + [s.total_dofs for s in spaces])
    total = offsets[-1]
    mask = np.ones(total, dtype=bool)
    if constrained is not None and len(constrained):
        mask[np.asarray(constrained, dtype=np.int64)] = False
    patches = []
    for v in range(nv):
        idx = []
        for k, s in enumerate(spaces):
            el = s.element
            off = offsets[k]
            if el.n_vertex:
                idx.extend(off + s.vertex_offset + v * el.n_vertex + j
                           for j in range(el.n_vertex))
            if el.n_edge:
                for e in v2e[v]:
                    idx.extend(off + s.edge_offset + e * el.n_edge + j
                               for j in range(el.n_edge))
            if el.n_cell:
                for c in v2c[v]:
                    idx.extend(off + s.cell_offset + c * el.n_cell + j
                               for j in range(el.n_cell))
        arr = np.array(sorted(set(idx)), dtype=np.int64)
        arr = arr[mask[arr]]
        if len(arr):
            patches.append(arr)
    return patches


class PatchSmoother:
    """Additive Schwarz over precomputed patch index sets; the dense patch
    blocks are factorised once per matrix."""

    def __init__(self, patches, omega=0.5):
        self.patches = patches
        self.omega = omega
        self.groups = {}
        for p in patches:
            self.groups.setdefault(len(p), []).append(p)
        self.group_idx = {s: np.array(g) for s, g in self.groups.items()}
        self._inv = None

    def setup(self, A):
        A = A.tocsr()
        self._inv = {}
        for s, idx in self.group_idx.items():
            blocks = np.empty((len(idx), s, s))
            for i, p in enumerate(idx):
                blocks[i] = A[p][:, p].toarray()
            try:
                inv = np.linalg.inv(blocks)
            except np.linalg.LinAlgError:
                log.warning("singular patch block: regularising with 1e-12 "
                            "diagonal shift")
                shift = 1e-12 * np.eye(s)
                inv = np.empty_like(blocks)
                for i in range(len(idx)):
                    try:
                        inv[i] = np.linalg.inv(blocks[i])
                    except np.linalg.LinAlgError:
                        inv[i] = np.linalg.inv(blocks[i] + shift)
            self._inv[s] = inv

    def apply(self, r, omega=None):
        """Sum of damped local solves of the restricted residual."""
        if omega is None:
            omega = 1.0  # inside a Krylov smoother the scaling is absorbed
        out = np.zeros_like(r)
        for s, idx in self.group_idx.items():
            R = r[idx]
            X = np.einsum("pij,pj->pi", self._inv[s], R)
            np.add.at(out, idx.ravel(), omega * X.ravel())
        return out

    def standalone_apply(self, r):
        return self.apply(r, omega=self.omega)


class MgConfig:
    def __init__(self, smooth_iters=6, cycles=1, omega=0.5):
        if smooth_iters < 1:
            raise ValueError("smoother iterations must be >= 1")
        self.smooth_iters = smooth_iters
        self.cycles = cycles
        self.omega = omega


class MgHierarchy:
    """Per-level spaces / transfers / patches for a tuple of fields over a
    MeshHierarchy; built once and reused across Jacobians."""

    def __init__(self, hierarchy, field_specs, bc_markers, levels=None):
        """field_specs: list of (family, degree); bc_markers: per field, None
        (no strong dofs), 'all', or list of marker names."""
        self.hierarchy = hierarchy
        nlev = len(hierarchy) if levels is None else levels
        self.nlevels = nlev
        meshes = hierarchy.levels[-nlev:]
        self.level_offset = len(hierarchy.levels) - nlev
        self.spaces = []
        self.constrained = []
        for mesh in meshes:
            sps = tuple(FunctionSpace(mesh, fam, deg)
                        for fam, deg in field_specs)
            self.spaces.append(sps)
            offs = np.cumsum([0] + [s.total_dofs for s in sps])
            con = []
            for k, s in enumerate(sps):
                mk = bc_markers[k]
                if mk is None:
                    continue
                dofs = s.boundary_dofs(None if mk == "all" else mk)
                con.append(offs[k] + dofs)
            self.constrained.append(np.concatenate(con) if con
                                    else np.zeros(0, dtype=np.int64))
        self.transfers = []
        for lv in range(nlev - 1):
            child = hierarchy.cell_children[self.level_offset + lv]
            blocks = [build_transfer(self.spaces[lv][k],
                                     self.spaces[lv + 1][k], child)
                      for k in range(len(field_specs))]
            P = sp.block_diag(blocks, format="csr")
            # corrections vanish on constrained dofs
            maskf = np.ones(P.shape[0])
            maskf[self.constrained[lv + 1]] = 0.0
            maskc = np.ones(P.shape[1])
            maskc[self.constrained[lv]] = 0.0
            P = sp.diags(maskf) @ P @ sp.diags(maskc)
            self.transfers.append(P.tocsr())
        self.patches = [star_patches(self.spaces[lv], self.constrained[lv])
                        for lv in range(nlev)]
        self.sizes = [sum(s.total_dofs for s in sps) for sps in self.spaces]

    @property
    def fine_spaces(self):
        return self.spaces[-1]


class GeometricMultigrid:
    """V-cycles with GMRES(patch) smoothing; coarse level solved by LU."""

    def __init__(self, mg_hierarchy, config=None):
        self.ctx = mg_hierarchy
        self.config = config or MgConfig()
        self.matrices = None
        self.smoothers = None
        self.coarse_lu = None

    def setup(self, A_fine):
        ctx = self.ctx
        n = ctx.nlevels
        mats = [None] * n
        mats[-1] = A_fine.tocsr()
        for lv in range(n - 2, -1, -1):
            P = ctx.transfers[lv]
            A = (P.T @ (mats[lv + 1] @ P)).tocsr()
            con = ctx.constrained[lv]
            if len(con):
                one = np.zeros(A.shape[0])
                one[con] = 1.0
                A = (A + sp.diags(one)).tocsr()
            mats[lv] = A
        self.matrices = mats
        self.smoothers = []
        for lv in range(1, n):
            sm = PatchSmoother(ctx.patches[lv], omega=self.config.omega)
            sm.setup(mats[lv])
            self.smoothers.append(sm)
        self.coarse_lu = LuSolver(mats[0])
        return self

    def _smooth(self, lv, b, x):
        sm = self.smoothers[lv - 1]
        res = fgmres(self.matrices[lv], b, M=sm.apply, x0=x,
                     rtol=0.0, atol=0.0, restart=self.config.smooth_iters,
                     maxiter=self.config.smooth_iters)
        return res.x

    def vcycle(self, lv, b, x):
        if lv == 0:
            return self.coarse_lu.solve(b)
        x = self._smooth(lv, b, x)
        r = b - self.matrices[lv] @ x
        P = self.ctx.transfers[lv - 1]
        rc = P.T @ r
        xc = self.vcycle(lv - 1, rc, np.zeros_like(rc))
        x = x + P @ xc
        return self._smooth(lv, b, x)

    def apply(self, r):
        """Preconditioner application: `cycles` V-cycles from zero."""
        x = np.zeros_like(r)
        for _ in range(self.config.cycles):
            x = self.vcycle(self.ctx.nlevels - 1, r, x)
        return x

    solve_update = vcycle
