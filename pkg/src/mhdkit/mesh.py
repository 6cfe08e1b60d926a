"""Oriented 2D triangle meshes of rectangles, facet connectivity and nested
uniform refinement hierarchies."""

import numpy as np


class MeshError(Exception):
    pass


class Mesh2D:
    """Triangle mesh with canonical low-to-high edge orientation.

    Local edge e of a cell (v0, v1, v2) is the edge opposite vertex e, i.e.
    e0 = (v1, v2), e1 = (v0, v2), e2 = (v0, v1).  Every global edge is stored
    with its vertex ids sorted ascending; `cell_edge_signs` records whether the
    local tangent agrees (+1) or disagrees (-1) with that global orientation.

    `cell_coords` carries per-cell vertex coordinates.  For periodic meshes
    these are unwrapped so each cell sees a geometrically consistent frame,
    while `vertices` keeps one representative coordinate per vertex.
    """

    def __init__(self, vertices, cells, cell_coords=None, x_period=None,
                 pattern="right"):
        self.vertices = np.asarray(vertices, dtype=float)
        self.cells = np.asarray(cells, dtype=np.int64)
        self.x_period = x_period
        self.pattern = pattern
        if cell_coords is None:
            cell_coords = self.vertices[self.cells]
        self.cell_coords = np.asarray(cell_coords, dtype=float)
        self._build_connectivity()
        self._check_orientation()
        self.edge_markers = np.zeros(self.num_edges, dtype=np.int64)
        self.marker_names = {}

    # -- construction ------------------------------------------------------

    def _build_connectivity(self):
        c = self.cells
        pairs = np.concatenate([c[:, [1, 2]], c[:, [0, 2]], c[:, [0, 1]]])
        pairs_sorted = np.sort(pairs, axis=1)
        uniq, inv = np.unique(pairs_sorted, axis=0, return_inverse=True)
        ncells = len(c)
        self.edges = uniq
        self.cell_edges = inv.reshape(3, ncells).T.copy()
        signs = np.where(pairs[:, 0] < pairs[:, 1], 1, -1)
        self.cell_edge_signs = signs.reshape(3, ncells).T.copy()

        ne = len(uniq)
        edge_cells = -np.ones((ne, 2), dtype=np.int64)
        edge_local = -np.ones((ne, 2), dtype=np.int64)
        order = np.argsort(self.cell_edges.ravel(), kind="stable")
        flat_edges = self.cell_edges.ravel()[order]
        flat_cells = np.repeat(np.arange(ncells), 3)[order]
        loc = np.tile(np.arange(3)[None, :], (ncells, 1)).ravel()[order]
        first = np.ones(len(flat_edges), dtype=bool)
        first[1:] = flat_edges[1:] != flat_edges[:-1]
        slot = np.zeros(len(flat_edges), dtype=np.int64)
        slot[~first] = 1
        edge_cells[flat_edges, slot] = flat_cells
        edge_local[flat_edges, slot] = loc
        self.edge_cells = edge_cells
        self.edge_local = edge_local
        self.boundary_edges = np.flatnonzero(edge_cells[:, 1] < 0)
        bdry_vertex = np.zeros(len(self.vertices), dtype=bool)
        bdry_vertex[self.edges[self.boundary_edges].ravel()] = True
        self.boundary_vertices = np.flatnonzero(bdry_vertex)

    def _check_orientation(self):
        a = self.signed_areas()
        if np.any(a <= 0):
            raise MeshError("cells with non-positive area")

    def signed_areas(self):
        p = self.cell_coords
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    # -- queries -------------------------------------------------------------

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_edges(self):
        return len(self.edges)

    def mark_boundary(self, tol_rel=1e-12):
        """Assign left/right/top/bottom markers from coordinates."""
        v = self.vertices
        lo = v.min(axis=0)
        hi = v.max(axis=0)
        tol = tol_rel * max(hi[0] - lo[0], hi[1] - lo[1], 1.0)
        names = {1: "left", 2: "right", 3: "bottom", 4: "top"}
        self.marker_names = {v_: k for k, v_ in names.items()}
        for e in self.boundary_edges:
            cell = self.edge_cells[e, 0]
            loc = self.edge_local[e, 0]
            lv = _local_edge_vertices(loc)
            xy = self.cell_coords[cell][lv]
            mid = xy.mean(axis=0)
            if abs(mid[0] - lo[0]) < tol:
                self.edge_markers[e] = 1
            elif abs(mid[0] - hi[0]) < tol:
                self.edge_markers[e] = 2
            elif abs(mid[1] - lo[1]) < tol:
                self.edge_markers[e] = 3
            elif abs(mid[1] - hi[1]) < tol:
                self.edge_markers[e] = 4

    def edges_with_markers(self, markers):
        ids = [self.marker_names[m] if isinstance(m, str) else m
               for m in markers]
        return np.flatnonzero(np.isin(self.edge_markers, ids))

    def edge_endpoints_in_cell(self, edge_ids, side):
        """Endpoint coordinates of edges in the frame of the adjacent cell
        `side`, ordered along the global (low->high vertex) direction."""
        edge_ids = np.asarray(edge_ids)
        cells = self.edge_cells[edge_ids, side]
        loc = self.edge_local[edge_ids, side]
        lv = _LOCAL_EDGE_VERTICES[loc]
        coords = self.cell_coords[cells[:, None], lv]
        glob = self.edges[edge_ids]
        cell_vids = self.cells[cells[:, None], lv]
        swap = cell_vids[:, 0] != glob[:, 0]
        out = coords.copy()
        out[swap] = coords[swap][:, ::-1]
        return out

    def facet_geometry(self, edge):
        """(length, unit normal, adjacent cells) for one edge.

        The normal points from the first adjacent cell to the second; for a
        boundary edge it points outward.
        """
        pts = self.edge_endpoints_in_cell([edge], 0)[0]
        t = pts[1] - pts[0]
        length = float(np.hypot(*t))
        t /= length
        n = np.array([t[1], -t[0]])
        cell0 = self.edge_cells[edge, 0]
        centroid = self.cell_coords[cell0].mean(axis=0)
        mid = pts.mean(axis=0)
        if np.dot(n, mid - centroid) < 0:
            n = -n
        return length, n, tuple(int(c) for c in self.edge_cells[edge])

    def min_edge_length(self):
        p0 = self.edge_endpoints_in_cell(np.arange(self.num_edges), 0)
        return float(np.linalg.norm(p0[:, 1] - p0[:, 0], axis=1).min())


_LOCAL_EDGE_VERTICES = np.array([[1, 2], [0, 2], [0, 1]])


def _local_edge_vertices(loc):
    return _LOCAL_EDGE_VERTICES[loc]


def build_rect_mesh(domain, nx, ny, pattern="right", periodic_x=False):
    """Triangulate the rectangle `domain` = (x0, x1, y0, y1).

    pattern "right" splits each quad along the lower-left to upper-right
    diagonal (2 triangles); "crossed" adds the cell centers and splits each
    quad into 4 triangles, preserving both reflection symmetries.
    """
    x0, x1, y0, y1 = domain
    if not (x1 > x0 and y1 > y0):
        raise MeshError("invalid domain: zero or negative extent")
    if nx < 1 or ny < 1:
        raise MeshError("nx, ny must be >= 1")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)

    cells = []
    if pattern == "right":
        for i in range(nx):
            for j in range(ny):
                sw, se = vid[i, j], vid[i + 1, j]
                nw, ne = vid[i, j + 1], vid[i + 1, j + 1]
                cells.append((sw, se, ne))
                cells.append((sw, ne, nw))
    elif pattern == "crossed":
        centers = []
        cid0 = len(verts)
        for i in range(nx):
            for j in range(ny):
                centers.append([0.5 * (xs[i] + xs[i + 1]),
                                0.5 * (ys[j] + ys[j + 1])])
        verts = np.vstack([verts, np.array(centers)])
        k = cid0
        for i in range(nx):
            for j in range(ny):
                sw, se = vid[i, j], vid[i + 1, j]
                nw, ne = vid[i, j + 1], vid[i + 1, j + 1]
                c = k
                k += 1
                cells.extend([(sw, se, c), (se, ne, c), (ne, nw, c),
                              (nw, sw, c)])
    else:
        raise MeshError(f"unknown pattern {pattern!r}")
    cells = np.asarray(cells, dtype=np.int64)

    x_period = None
    cell_coords = verts[cells]
    if periodic_x:
        x_period = x1 - x0
        remap = np.arange(len(verts))
        right = np.isclose(verts[:, 0], x1)
        for v in np.flatnonzero(right):
            match = np.flatnonzero(np.isclose(verts[:, 0], x0)
                                   & np.isclose(verts[:, 1], verts[v, 1]))
            remap[v] = match[0]
        cells = remap[cells]
        # unwrapped frames already stored in cell_coords
        keep = np.unique(cells)
        new_id = -np.ones(len(verts), dtype=np.int64)
        new_id[keep] = np.arange(len(keep))
        cells = new_id[cells]
        verts = verts[keep]

    mesh = Mesh2D(verts, cells, cell_coords=cell_coords, x_period=x_period,
                  pattern=pattern)
    mesh.mark_boundary()
    return mesh


class MeshHierarchy:
    """Nested uniformly refined meshes, coarse to fine."""

    def __init__(self, levels, cell_children, vertex_embedding):
        self.levels = levels
        self.cell_children = cell_children
        self.vertex_embedding = vertex_embedding

    def __len__(self):
        return len(self.levels)

    @property
    def finest(self):
        return self.levels[-1]


def refine_uniform(mesh, levels):
    """Refine `levels` times; each triangle splits into 4 via edge midpoints."""
    if levels < 0:
        raise MeshError("levels must be >= 0")
    meshes = [mesh]
    children = []
    embeddings = []
    for _ in range(levels):
        fine, child, emb = _refine_once(meshes[-1])
        meshes.append(fine)
        children.append(child)
        embeddings.append(emb)
    return MeshHierarchy(meshes, children, embeddings)


def _refine_once(mesh):
    nv = mesh.num_vertices
    ne = mesh.num_edges
    mid_id = nv + np.arange(ne)
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]]
                       + mesh.vertices[mesh.edges[:, 1]])
    verts = np.vstack([mesh.vertices, midpoints])

    c = mesh.cells
    m = mid_id[mesh.cell_edges]  # (nc, 3): midpoint of local edge i
    child_cells = np.empty((mesh.num_cells, 4, 3), dtype=np.int64)
    child_cells[:, 0] = np.stack([c[:, 0], m[:, 2], m[:, 1]], axis=1)
    child_cells[:, 1] = np.stack([c[:, 1], m[:, 0], m[:, 2]], axis=1)
    child_cells[:, 2] = np.stack([c[:, 2], m[:, 1], m[:, 0]], axis=1)
    child_cells[:, 3] = np.stack([m[:, 0], m[:, 1], m[:, 2]], axis=1)

    p = mesh.cell_coords
    mc = np.empty((mesh.num_cells, 3, 2))
    mc[:, 0] = 0.5 * (p[:, 1] + p[:, 2])
    mc[:, 1] = 0.5 * (p[:, 0] + p[:, 2])
    mc[:, 2] = 0.5 * (p[:, 0] + p[:, 1])
    child_coords = np.empty((mesh.num_cells, 4, 3, 2))
    child_coords[:, 0] = np.stack([p[:, 0], mc[:, 2], mc[:, 1]], axis=1)
    child_coords[:, 1] = np.stack([p[:, 1], mc[:, 0], mc[:, 2]], axis=1)
    child_coords[:, 2] = np.stack([p[:, 2], mc[:, 1], mc[:, 0]], axis=1)
    child_coords[:, 3] = mc

    fine = Mesh2D(verts, child_cells.reshape(-1, 3),
                  cell_coords=child_coords.reshape(-1, 3, 2),
                  x_period=mesh.x_period, pattern=mesh.pattern)
    # markers: fine boundary edges inherit from their coarse parent
    fine.marker_names = dict(mesh.marker_names)
    fine_edge_lookup = {tuple(e): i for i, e in enumerate(map(tuple, fine.edges))}
    for e in mesh.boundary_edges:
        a, b = mesh.edges[e]
        mmid = mid_id[e]
        for pair in ((a, mmid), (mmid, b)):
            key = tuple(sorted(pair))
            fe = fine_edge_lookup.get(key)
            if fe is not None:
                fine.edge_markers[fe] = mesh.edge_markers[e]
    child_map = np.arange(mesh.num_cells * 4).reshape(mesh.num_cells, 4)
    embedding = np.arange(nv)
    return fine, child_map, embedding


def write_vtk(path, mesh, point_data=None):
    """Legacy ASCII VTK unstructured grid dump (cell type 5)."""
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\nmhdkit mesh\nASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.num_vertices} double\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.16e} {y:.16e} 0.0\n")
        nc = mesh.num_cells
        f.write(f"CELLS {nc} {4 * nc}\n")
        for c in mesh.cells:
            f.write(f"3 {c[0]} {c[1]} {c[2]}\n")
        f.write(f"CELL_TYPES {nc}\n")
        f.write("5\n" * nc)
        if point_data:
            f.write(f"POINT_DATA {mesh.num_vertices}\n")
            for name, arr in point_data.items():
                arr = np.asarray(arr, dtype=float)
                if arr.ndim == 1:
                    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    for v in arr:
                        f.write(f"{v:.16e}\n")
                else:
                    f.write(f"VECTORS {name} double\n")
                    for row in arr:
                        z = row[2] if len(row) > 2 else 0.0
                        f.write(f"{row[0]:.16e} {row[1]:.16e} {z:.16e}\n")


def read_vtk(path):
    """Read back a legacy VTK file written by `write_vtk`."""
    with open(path) as f:
        tokens = f.read().split()
    i = tokens.index("POINTS")
    npts = int(tokens[i + 1])
    pts = np.array(tokens[i + 3:i + 3 + 3 * npts], dtype=float).reshape(-1, 3)
    i = tokens.index("CELLS")
    ncells = int(tokens[i + 1])
    cdata = np.array(tokens[i + 3:i + 3 + 4 * ncells], dtype=np.int64)
    cells = cdata.reshape(-1, 4)[:, 1:]
    mesh = Mesh2D(pts[:, :2], cells)
    point_data = {}
    j = 0
    while j < len(tokens):
        if tokens[j] == "SCALARS":
            name = tokens[j + 1]
            k = j + 6
            point_data[name] = np.array(tokens[k:k + npts], dtype=float)
            j = k + npts
        elif tokens[j] == "VECTORS":
            name = tokens[j + 1]
            k = j + 3
            point_data[name] = np.array(tokens[k:k + 3 * npts],
                                        dtype=float).reshape(-1, 3)
            j = k + 3 * npts
        else:
            j += 1
    return mesh, point_data
