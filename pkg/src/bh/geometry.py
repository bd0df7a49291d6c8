"""Periodic unit cell meshes with interface-fitted simplicial grids.

Three geometry families on the unit cell (0,1)^N:

* Disk2D          circular inclusion of radius r0, disconnected inclusions
* Layered2D       horizontal strip a < y2 < b, both phases connected
* TubeLattice3D   three axis-aligned cylinders of radius rho, both connected

The inclusion phase is E_int, the matrix phase E_out, and the interface
carries unit normals oriented from E_int into E_out.  Meshes are fitted:
every element lies in exactly one phase and the interface is a union of
element facets.

Vertices on opposite faces of the cell are paired exactly: for each
periodic pair (p, q, axis) the coordinates satisfy
vertex[q] - vertex[p] == e_axis with no floating point slack.  The mesh
generators are written so that this holds bitwise (boundary coordinates
are produced once and reused, never recomputed through trigonometry on
both sides).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidGeometry, MeshFailure, MissingAdjacency, NonIntegerTiling

PHASE_INT = 0
PHASE_OUT = 1
PHASE_MEMBRANE = 2

# precedence used to orient interface normals: inner side listed first
_PHASE_RANK = {PHASE_INT: 0, PHASE_MEMBRANE: 1, PHASE_OUT: 2}

KINDS = ("Disk2D", "Layered2D", "TubeLattice3D")


# ---------------------------------------------------------------------------
# specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometrySpec:
    """Declarative description of a unit cell geometry."""

    kind: str
    params: dict = field(default_factory=dict)
    h: float = 0.05

    @property
    def dim(self) -> int:
        return 3 if self.kind == "TubeLattice3D" else 2

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InvalidGeometry(f"unknown geometry kind {self.kind!r}")
        if not (0.0 < self.h <= 0.25):
            raise InvalidGeometry(f"mesh size h={self.h} outside (0, 0.25]")
        if self.kind == "Disk2D":
            r0 = self.params.get("r0")
            if r0 is None or not (0.0 < r0 < 0.5):
                raise InvalidGeometry(
                    f"Disk2D needs 0 < r0 < 0.5 (inclusion strictly inside the cell), got {r0}")
        elif self.kind == "Layered2D":
            a = self.params.get("a")
            b = self.params.get("b")
            if a is None or b is None or not (0.0 < a < b < 1.0):
                raise InvalidGeometry(f"Layered2D needs 0 < a < b < 1, got a={a} b={b}")
        elif self.kind == "TubeLattice3D":
            rho = self.params.get("rho")
            if rho is None or not (0.0 < rho < 0.5):
                raise InvalidGeometry(f"TubeLattice3D needs 0 < rho < 0.5, got {rho}")

    @property
    def topology(self) -> str:
        """'cd' if inclusions are disconnected, 'cc' if both phases connect."""
        return "cd" if self.kind == "Disk2D" else "cc"


# ---------------------------------------------------------------------------
# mesh containers
# ---------------------------------------------------------------------------

@dataclass
class CellMesh:
    """Fitted simplicial mesh of the periodic unit cell."""

    vertices: np.ndarray        # (nv, N) float
    simplices: np.ndarray       # (ne, N+1) int
    phase: np.ndarray           # (ne,) int
    periodic_pairs: np.ndarray  # (npair, 3) int rows (low, high, axis)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def volumes(self) -> np.ndarray:
        return simplex_volumes(self.vertices, self.simplices)

    def phase_volume(self, phase: int) -> float:
        v = self.volumes()
        return float(v[self.phase == phase].sum())


@dataclass
class MembraneMesh(CellMesh):
    """Unit cell with a thick membrane band of width eta replacing the interface."""

    eta: float = 0.0


@dataclass
class MicroMesh:
    """eps-periodic tiling of a unit cell mesh over the fixed domain (0,1)^N."""

    vertices: np.ndarray
    simplices: np.ndarray
    phase: np.ndarray
    eps: float
    boundary_vertices: np.ndarray  # indices of vertices on the outer boundary
    eta: float = 0.0               # nonzero for tiled membrane cells

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def volumes(self) -> np.ndarray:
        return simplex_volumes(self.vertices, self.simplices)


@dataclass
class SurfaceMesh:
    """Interface triangulation with normals, component labels and adjacency."""

    facets: np.ndarray     # (nf, N) int vertex indices
    normals: np.ndarray    # (nf, N) float unit normals, inner phase -> outer
    component: np.ndarray  # (nf,) int in 0..m-1
    measures: np.ndarray   # (nf,) float facet measures
    adjacency: np.ndarray  # (nf, 2) int (element on inner side, element on outer side)

    @property
    def n_components(self) -> int:
        return int(self.component.max()) + 1 if len(self.component) else 0

    def area(self, component=None) -> float:
        if component is None:
            return float(self.measures.sum())
        return float(self.measures[self.component == component].sum())


# ---------------------------------------------------------------------------
# generic simplex helpers
# ---------------------------------------------------------------------------

def simplex_volumes(vertices: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    """Positive volumes of simplices (orientation is fixed at build time)."""
    p0 = vertices[simplices[:, 0]]
    edges = vertices[simplices[:, 1:]] - p0[:, None, :]
    n = vertices.shape[1]
    det = np.linalg.det(edges)
    fact = {1: 1.0, 2: 2.0, 3: 6.0}[n]
    return det / fact


def _fix_orientation(vertices: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    vols = simplex_volumes(vertices, simplices)
    flip = vols < 0
    if np.any(flip):
        simplices = simplices.copy()
        simplices[flip, 0], simplices[flip, 1] = (
            simplices[flip, 1].copy(), simplices[flip, 0].copy())
    return simplices


def facet_measures(vertices: np.ndarray, facets: np.ndarray) -> np.ndarray:
    pts = vertices[facets]
    if facets.shape[1] == 2:
        return np.linalg.norm(pts[:, 1] - pts[:, 0], axis=1)
    e1 = pts[:, 1] - pts[:, 0]
    e2 = pts[:, 2] - pts[:, 0]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, a):
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _canonical_vertex_map(n_vertices: int, periodic_pairs: np.ndarray) -> np.ndarray:
    """Map each vertex to its canonical periodic representative."""
    uf = _UnionFind(n_vertices)
    for p, q, _ in periodic_pairs:
        uf.union(int(p), int(q))
    return np.array([uf.find(i) for i in range(n_vertices)])


def extract_interface(vertices, simplices, phase, periodic_pairs=None):
    """Build the SurfaceMesh separating distinct phases of a fitted mesh.

    Facets are oriented from the lower-rank phase into the higher-rank one
    (int -> membrane -> out).  Components are labelled by facet connectivity
    through shared ridges; when periodic pairs are given, ridges are matched
    modulo the periodic identification so that wrapping interfaces come out
    as single components.
    """
    ne, npv = simplices.shape
    nfv = npv - 1  # vertices per facet

    # enumerate element facets: facet k of element e omits local vertex k
    from collections import defaultdict
    facet_elems = defaultdict(list)
    for e in range(ne):
        verts = simplices[e]
        for k in range(npv):
            f = tuple(sorted(np.delete(verts, k)))
            facet_elems[f].append(e)

    facets, inner, outer = [], [], []
    for f, elems in facet_elems.items():
        if len(elems) != 2:
            continue
        e0, e1 = elems
        if phase[e0] == phase[e1]:
            continue
        if _PHASE_RANK[int(phase[e0])] < _PHASE_RANK[int(phase[e1])]:
            facets.append(f); inner.append(e0); outer.append(e1)
        else:
            facets.append(f); inner.append(e1); outer.append(e0)
    if not facets:
        raise MeshFailure("no interface facets found between phases")

    order = np.lexsort(np.array(facets, dtype=np.int64).T[::-1])
    facets = np.array(facets, dtype=np.int64)[order]
    inner = np.array(inner, dtype=np.int64)[order]
    outer = np.array(outer, dtype=np.int64)[order]

    # one sanity pass: each interface facet needs bulk neighbours on both sides
    if np.any(inner < 0) or np.any(outer < 0):
        raise MissingAdjacency("interface facet without an element on each side")

    measures = facet_measures(vertices, facets)
    if np.any(measures < 1e-14):
        raise MeshFailure("degenerate interface facet produced by mesh generator")

    # unit normals oriented by the centroid offset inner -> outer
    nrm = _facet_normals(vertices, facets)
    c_in = vertices[simplices[inner]].mean(axis=1)
    c_out = vertices[simplices[outer]].mean(axis=1)
    sign = np.sign(np.einsum("ij,ij->i", nrm, c_out - c_in))
    if np.any(sign == 0):
        raise MeshFailure("cannot orient an interface facet")
    nrm *= sign[:, None]

    # component labelling through shared ridges, modulo periodicity
    nv = vertices.shape[0]
    canon = (amap := _canonical_vertex_map(nv, periodic_pairs)) if periodic_pairs is not None and len(periodic_pairs) else np.arange(nv)
    uf = _UnionFind(len(facets))
    ridge_owner = {}
    for i, f in enumerate(facets):
        cf = sorted(int(canon[v]) for v in f)
        if nfv == 2:
            ridges = [(cf[0],), (cf[1],)]
        else:
            ridges = [tuple(sorted((cf[0], cf[1]))), tuple(sorted((cf[0], cf[2]))),
                      tuple(sorted((cf[1], cf[2])))]
        for r in ridges:
            if r in ridge_owner:
                uf.union(ridge_owner[r], i)
            else:
                ridge_owner[r] = i
    roots = np.array([uf.find(i) for i in range(len(facets))])
    labels = {}
    comp = np.zeros(len(facets), dtype=np.int64)
    for i, r in enumerate(roots):
        if r not in labels:
            labels[r] = len(labels)
        comp[i] = labels[r]

    return SurfaceMesh(facets=facets, normals=nrm, component=comp,
                       measures=measures, adjacency=np.column_stack([inner, outer]))


def _facet_normals(vertices, facets):
    pts = vertices[facets]
    if facets.shape[1] == 2:
        t = pts[:, 1] - pts[:, 0]
        n = np.column_stack([t[:, 1], -t[:, 0]])
    else:
        n = np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
    return n / np.linalg.norm(n, axis=1)[:, None]


# ---------------------------------------------------------------------------
# Disk2D and membrane cells: polar O-grid
# ---------------------------------------------------------------------------

def _sym_directions(n_theta: int) -> np.ndarray:
    """Unit directions of an n_theta fan, exactly invariant under the
    dihedral symmetries of the square (n_theta must be a multiple of 8)."""
    q = n_theta // 8
    base = [(np.cos(2.0 * np.pi * r / n_theta), np.sin(2.0 * np.pi * r / n_theta))
            for r in range(q + 1)]
    base[0] = (1.0, 0.0)
    s2 = np.sqrt(0.5)
    base[q] = (s2, s2)
    out = np.empty((n_theta, 2))
    for i in range(n_theta):
        o, r = divmod(i, q)
        if o == 0:
            x, y = base[r]
        elif o == 1:
            x, y = base[q - r][1], base[q - r][0]
        elif o == 2:
            x, y = -base[r][1], base[r][0]
        elif o == 3:
            x, y = -base[q - r][0], base[q - r][1]
        elif o == 4:
            x, y = -base[r][0], -base[r][1]
        elif o == 5:
            x, y = -base[q - r][1], -base[q - r][0]
        elif o == 6:
            x, y = base[r][1], -base[r][0]
        else:
            x, y = base[q - r][0], -base[q - r][1]
        out[i] = (x, y)
    return out


def _square_boundary_points(n_theta: int) -> np.ndarray:
    """Points where the n_theta rays from the cell centre hit the unit
    square boundary.  Built per octant from one table of tangent offsets so
    opposite edges carry bitwise identical coordinates."""
    q = n_theta // 8
    d = np.array([0.5 * np.tan(2.0 * np.pi * r / n_theta) for r in range(q + 1)])
    d[0] = 0.0
    d[q] = 0.5
    out = np.empty((n_theta, 2))
    for i in range(n_theta):
        o, r = divmod(i, q)
        if o == 0:
            p = (1.0, 0.5 + d[r])
        elif o == 1:
            p = (0.5 + d[q - r], 1.0)
        elif o == 2:
            p = (0.5 - d[r], 1.0)
        elif o == 3:
            p = (0.0, 0.5 + d[q - r])
        elif o == 4:
            p = (0.0, 0.5 - d[r])
        elif o == 5:
            p = (0.5 - d[q - r], 0.0)
        elif o == 6:
            p = (0.5 + d[r], 0.0)
        else:
            p = (1.0, 0.5 - d[q - r])
        out[i] = p
    return out


def _polar_cell_mesh(radii, zone_phase, h, n_theta=None):
    """O-grid mesh of the unit cell around concentric circles.

    radii: increasing interior ring radii (first zone is the centre fan),
    zone_phase: phase of each radial zone, len(radii) zones for the rings
    plus one more for everything outside radii[-1].
    """
    r_out = radii[-1]
    if n_theta is None:
        n_theta = 8 * max(2, int(np.ceil(2.0 * np.pi * r_out / (8.0 * h))))
    dirs = _sym_directions(n_theta)
    bpts = _square_boundary_points(n_theta)

    ring_radii = []
    ring_phase = []   # phase of the zone between ring k-1 and ring k
    prev = 0.0
    for r, ph in zip(radii, zone_phase[:-1]):
        nseg = max(1, int(round((r - prev) / h)))
        for s in range(1, nseg + 1):
            ring_radii.append(prev + (r - prev) * s / nseg)
            ring_phase.append(ph)
        # snap the zone boundary ring to the exact radius
        ring_radii[-1] = r
        prev = r

    # outer shells: interpolate between the outermost circle and the square
    n_shell = max(2, int(np.ceil((0.5 * np.sqrt(2.0) - r_out) / h)))

    nv_ring = len(ring_radii)
    verts = [np.array([[0.5, 0.5]])]
    for r in ring_radii:
        verts.append(np.array([0.5, 0.5]) + r * dirs)
    circle = verts[-1]
    for s in range(1, n_shell + 1):
        t = s / n_shell
        if s == n_shell:
            verts.append(bpts.copy())
        else:
            verts.append(circle + t * (bpts - circle))
    vertices = np.vstack(verts)

    n_rings_total = nv_ring + n_shell
    def rid(k, i):  # ring index k = 1..n_rings_total
        return 1 + (k - 1) * n_theta + (i % n_theta)

    tris, phases = [], []
    ph0 = ring_phase[0]
    for i in range(n_theta):
        tris.append((0, rid(1, i), rid(1, i + 1)))
        phases.append(ph0)
    for k in range(1, n_rings_total):
        ph = ring_phase[k] if k < nv_ring else zone_phase[-1]
        for i in range(n_theta):
            a, b = rid(k, i), rid(k, i + 1)
            c, d = rid(k + 1, i), rid(k + 1, i + 1)
            if i % 2 == 0:
                tris.append((a, b, d)); tris.append((a, d, c))
            else:
                tris.append((a, b, c)); tris.append((b, d, c))
            phases.append(ph); phases.append(ph)

    simplices = _fix_orientation(vertices, np.array(tris, dtype=np.int64))
    phase = np.array(phases, dtype=np.int64)

    # periodic pairs from the boundary ring (built octant-symmetric above)
    pairs = _match_boundary_pairs(vertices, first=1 + (n_rings_total - 1) * n_theta,
                                  count=n_theta)
    return CellMesh(vertices=vertices, simplices=simplices, phase=phase,
                    periodic_pairs=pairs)


def _match_boundary_pairs(vertices, first=None, count=None):
    """Pair boundary vertices across opposite faces by exact coordinates."""
    nv = vertices.shape[0]
    dim = vertices.shape[1]
    if first is None:
        idx = np.arange(nv)
    else:
        idx = np.arange(first, first + count)
    pairs = []
    for axis in range(dim):
        lows = {}
        for v in idx:
            if vertices[v, axis] == 0.0:
                key = tuple(np.delete(vertices[v], axis))
                lows[key] = v
        for v in idx:
            if vertices[v, axis] == 1.0:
                key = tuple(np.delete(vertices[v], axis))
                if key not in lows:
                    raise MeshFailure(
                        f"unpaired periodic vertex {v} on axis {axis} face")
                pairs.append((lows[key], v, axis))
    return np.array(sorted(pairs), dtype=np.int64)


def _build_disk(spec: GeometrySpec):
    r0 = spec.params["r0"]
    mesh = _polar_cell_mesh([r0], [PHASE_INT, PHASE_OUT], spec.h)
    surf = extract_interface(mesh.vertices, mesh.simplices, mesh.phase,
                             mesh.periodic_pairs)
    return mesh, surf


def build_membrane_cell(spec: GeometrySpec, eta: float):
    """Replace the Disk2D interface by a resolved band of width eta.

    The band occupies r0 - eta/2 < r < r0 + eta/2 and is marked
    PHASE_MEMBRANE.  Only Disk2D cells support membranes.
    """
    spec.validate()
    if spec.kind != "Disk2D":
        raise InvalidGeometry("membrane cells are only defined for Disk2D")
    if not (0.0 < eta <= 0.2):
        raise InvalidGeometry(f"membrane width eta={eta} outside (0, 0.2]")
    r0 = spec.params["r0"]
    r_in, r_ex = r0 - eta / 2.0, r0 + eta / 2.0
    if r_in <= 0.0 or r_ex >= 0.5:
        raise InvalidGeometry("membrane band leaves the unit cell")
    base = _polar_cell_mesh([r_in, r_ex],
                            [PHASE_INT, PHASE_MEMBRANE, PHASE_OUT], spec.h)
    mesh = MembraneMesh(vertices=base.vertices, simplices=base.simplices,
                        phase=base.phase, periodic_pairs=base.periodic_pairs,
                        eta=eta)
    surf = extract_interface(mesh.vertices, mesh.simplices, mesh.phase,
                             mesh.periodic_pairs)
    return mesh, surf


# ---------------------------------------------------------------------------
# Layered2D: structured grid with exact layer lines
# ---------------------------------------------------------------------------

def _build_layered(spec: GeometrySpec):
    a, b = spec.params["a"], spec.params["b"]
    h = spec.h
    nx = max(2, int(round(1.0 / h)))
    xs = np.linspace(0.0, 1.0, nx + 1)

    ys = [np.linspace(0.0, a, max(1, int(round(a / h))) + 1)]
    ys.append(np.linspace(a, b, max(1, int(round((b - a) / h))) + 1)[1:])
    ys.append(np.linspace(b, 1.0, max(1, int(round((1.0 - b) / h))) + 1)[1:])
    ys = np.concatenate(ys)
    ny = len(ys) - 1

    vid = lambda i, j: j * (nx + 1) + i
    vertices = np.array([[xs[i], ys[j]] for j in range(ny + 1) for i in range(nx + 1)])

    tris, phases = [], []
    for j in range(ny):
        ymid = 0.5 * (ys[j] + ys[j + 1])
        ph = PHASE_INT if a < ymid < b else PHASE_OUT
        for i in range(nx):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                tris.append((v00, v10, v11)); tris.append((v00, v11, v01))
            else:
                tris.append((v00, v10, v01)); tris.append((v10, v11, v01))
            phases.append(ph); phases.append(ph)

    simplices = _fix_orientation(vertices, np.array(tris, dtype=np.int64))
    phase = np.array(phases, dtype=np.int64)
    pairs = _match_boundary_pairs(vertices)
    mesh = CellMesh(vertices=vertices, simplices=simplices, phase=phase,
                    periodic_pairs=pairs)
    surf = extract_interface(vertices, simplices, phase, pairs)
    return mesh, surf


# ---------------------------------------------------------------------------
# TubeLattice3D: Kuhn background grid cut along a level set
# ---------------------------------------------------------------------------

_KUHN_PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


def _tube_level_set(pts: np.ndarray, rho: float) -> np.ndarray:
    """Signed distance-like function, negative inside the tube lattice."""
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    dx = np.sqrt((y - 0.5) ** 2 + (z - 0.5) ** 2)
    dy = np.sqrt((x - 0.5) ** 2 + (z - 0.5) ** 2)
    dz = np.sqrt((x - 0.5) ** 2 + (y - 0.5) ** 2)
    return np.minimum(np.minimum(dx, dy), dz) - rho


def _build_tube(spec: GeometrySpec):
    rho = spec.params["rho"]
    n = max(4, int(round(1.0 / spec.h)))
    snap_tol = 0.15

    # grid vertices at integer lattice / n, coordinates exact at faces
    lin = np.arange(n + 1) / n
    lin[-1] = 1.0
    I, J, K = np.meshgrid(np.arange(n + 1), np.arange(n + 1), np.arange(n + 1),
                          indexing="ij")
    gid = lambda i, j, k: (i * (n + 1) + j) * (n + 1) + k
    pos = np.column_stack([lin[I.ravel()], lin[J.ravel()], lin[K.ravel()]])
    phi = _tube_level_set(pos, rho)
    phi[np.abs(phi) < 1e-14] = 0.0

    # Kuhn tetrahedra of every grid cube
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                base = np.array([i, j, k])
                for perm in _KUHN_PERMS:
                    vs = [base.copy()]
                    cur = base.copy()
                    for ax in perm:
                        cur = cur + np.eye(3, dtype=int)[ax]
                        vs.append(cur.copy())
                    tets.append([gid(*v) for v in vs])
    tets = np.array(tets, dtype=np.int64)

    # adjacency: undirected edges of the tet mesh
    edge_set = set()
    for t in tets:
        for a in range(4):
            for b in range(a + 1, 4):
                e = (min(t[a], t[b]), max(t[a], t[b]))
                edge_set.add(e)
    incident = {}
    for a, b in edge_set:
        incident.setdefault(a, []).append(b)
        incident.setdefault(b, []).append(a)

    # snap pass: move grid vertices onto nearby level-set crossings.
    # Face vertices only move within their faces, so decisions are mirrored
    # exactly on opposite faces (phi agrees there bitwise).
    locked = {}  # vertex -> new position
    coord_int = np.column_stack([I.ravel(), J.ravel(), K.ravel()])
    for v in range(pos.shape[0]):
        if phi[v] == 0.0:
            continue
        fixed_axes = [(ax, coord_int[v, ax]) for ax in range(3)
                      if coord_int[v, ax] in (0, n)]
        best = None
        for w in sorted(incident.get(v, [])):
            if phi[w] == 0.0 or phi[v] * phi[w] > 0.0:
                continue
            ok = all(coord_int[w, ax] == c for ax, c in fixed_axes)
            if not ok:
                continue
            t = phi[v] / (phi[v] - phi[w])
            if t < snap_tol and (best is None or t < best[0]):
                best = (t, w)
        if best is not None:
            t, w = best
            locked[v] = pos[v] + t * (pos[w] - pos[v])
    for v, p in locked.items():
        pos[v] = p
        phi[v] = 0.0

    # cut vertices on edges with a strict sign change
    cut_id = {}
    cut_pos = []
    next_id = pos.shape[0]
    for a, b in sorted(edge_set):
        if phi[a] * phi[b] < 0.0:
            t = phi[a] / (phi[a] - phi[b])
            cut_id[(a, b)] = next_id
            cut_pos.append(pos[a] + t * (pos[b] - pos[a]))
            next_id += 1
    all_pos = np.vstack([pos, np.array(cut_pos).reshape(-1, 3)])

    sign = np.sign(phi)
    out_tets, out_phase = [], []
    for t in tets:
        s = sign[t]
        cuts = {}
        for a in range(4):
            for b in range(a + 1, 4):
                e = (min(t[a], t[b]), max(t[a], t[b]))
                if e in cut_id:
                    cuts[e] = cut_id[e]
        if not cuts:
            if np.any(s < 0):
                ph = PHASE_INT
            elif np.any(s > 0):
                ph = PHASE_OUT
            else:
                c = all_pos[t].mean(axis=0)
                ph = PHASE_INT if _tube_level_set(c[None, :], rho)[0] < 0 else PHASE_OUT
            out_tets.append(list(t)); out_phase.append(ph)
            continue
        for side, ph in ((-1, PHASE_INT), (1, PHASE_OUT)):
            sub = _clip_tet_to_side(t, s, cuts, all_pos, side)
            for st in sub:
                out_tets.append(st); out_phase.append(ph)

    simplices = np.array(out_tets, dtype=np.int64)
    phase = np.array(out_phase, dtype=np.int64)

    vols = simplex_volumes(all_pos, simplices)
    if np.any(np.abs(vols) < 1e-6 * (1.0 / n) ** 3 / 6.0):
        # drop exact slivers created by coning through coplanar points
        keep = np.abs(vols) > 1e-12 * (1.0 / n) ** 3
        simplices, phase = simplices[keep], phase[keep]
    simplices = _fix_orientation(all_pos, simplices)

    # compact unused vertices
    used = np.unique(simplices)
    remap = -np.ones(all_pos.shape[0], dtype=np.int64)
    remap[used] = np.arange(len(used))
    vertices = all_pos[used]
    simplices = remap[simplices]

    total = simplex_volumes(vertices, simplices).sum()
    if abs(total - 1.0) > 1e-10:
        raise MeshFailure(f"tube mesh volume defect {total - 1.0:.3e}")

    pairs = _tube_periodic_pairs(vertices, remap, coord_int, n, cut_id, pos)
    mesh = CellMesh(vertices=vertices, simplices=simplices, phase=phase,
                    periodic_pairs=pairs)
    surf = extract_interface(vertices, simplices, phase, pairs)
    return mesh, surf


def _clip_tet_to_side(t, s, cuts, all_pos, side):
    """Sub-tetrahedra of the part of tet t on the given side of the cut.

    The clipped region is convex, so it is coned from its smallest vertex
    id.  Quad faces are split by the diagonal through their smallest vertex
    id, which neighbouring tets reproduce independently.
    """
    keep = lambda sv: sv * side > 0 or sv == 0

    # clip each of the four faces to the side
    face_tris = []
    for drop in range(4):
        tri = [t[k] for k in range(4) if k != drop]
        tsg = [s[np.where(t == v)[0][0]] for v in tri]
        poly = []
        for i in range(3):
            a, b = tri[i], tri[(i + 1) % 3]
            sa, sb = tsg[i], tsg[(i + 1) % 3]
            if keep(sa):
                poly.append(a)
            e = (min(a, b), max(a, b))
            if e in cuts:
                poly.append(cuts[e])
        poly = [p for i, p in enumerate(poly) if p != poly[i - 1]] if poly else []
        if len(poly) < 3:
            continue
        if len(poly) == 3:
            face_tris.append(tuple(poly))
        else:  # quad: diagonal through the global minimum id
            m = poly.index(min(poly))
            q = poly[m:] + poly[:m]
            face_tris.append((q[0], q[1], q[2]))
            face_tris.append((q[0], q[2], q[3]))

    # the internal cut polygon: cut points plus on-surface corners
    cpts = sorted(set(cuts.values()) | {t[k] for k in range(4) if s[k] == 0})
    if len(cpts) >= 3:
        cpoly = _order_planar(cpts, all_pos)
        m = cpoly.index(min(cpoly))
        q = cpoly[m:] + cpoly[:m]
        for i in range(1, len(q) - 1):
            face_tris.append((q[0], q[i], q[i + 1]))

    verts = sorted({v for f in face_tris for v in f})
    if len(verts) < 4:
        return []
    apex = verts[0]
    subs = []
    for f in face_tris:
        if apex in f:
            continue
        subs.append([apex, f[0], f[1], f[2]])
    # drop degenerate cones (apex coplanar with the face)
    good = []
    for st in subs:
        p = all_pos[st]
        vol = np.linalg.det(p[1:] - p[0]) / 6.0
        if abs(vol) > 1e-16:
            good.append(st)
    return good


def _order_planar(ids, all_pos):
    """Order coplanar points into a convex polygon."""
    pts = all_pos[ids]
    c = pts.mean(axis=0)
    # plane basis from the two largest spread directions
    u, sv, vt = np.linalg.svd(pts - c)
    e1, e2 = vt[0], vt[1]
    ang = np.arctan2((pts - c) @ e2, (pts - c) @ e1)
    order = np.argsort(ang, kind="stable")
    return [ids[i] for i in order]


def _tube_periodic_pairs(vertices, remap, coord_int, n, cut_id, grid_pos):
    """Periodic pairs of the cut tube mesh.

    Grid vertices pair by lattice coordinates.  Cut vertices on in-face
    edges pair through the paired endpoints of their edges: phi agrees on
    opposite faces bitwise, so both cuts exist and line up exactly.
    """
    n1 = n + 1
    gid = lambda i, j, k: (i * n1 + j) * n1 + k
    pairs = set()

    for axis in range(3):
        for u in range(n1):
            for w in range(n1):
                if axis == 0:
                    lo, hi = gid(0, u, w), gid(n, u, w)
                elif axis == 1:
                    lo, hi = gid(u, 0, w), gid(u, n, w)
                else:
                    lo, hi = gid(u, w, 0), gid(u, w, n)
                a, b = remap[lo], remap[hi]
                if a >= 0 and b >= 0:
                    pairs.add((a, b, axis))

    # cut vertices on face edges
    def face_partner(v, axis):
        i, j, k = coord_int[v]
        c = [i, j, k]
        c[axis] = n
        return gid(*c)

    for (a, b), cid in cut_id.items():
        for axis in range(3):
            if coord_int[a, axis] == 0 and coord_int[b, axis] == 0:
                pa, pb = face_partner(a, axis), face_partner(b, axis)
                e = (min(pa, pb), max(pa, pb))
                if e not in cut_id:
                    raise MeshFailure("periodic partner edge lost its crossing")
                lo, hi = remap[cid], remap[cut_id[e]]
                if lo >= 0 and hi >= 0:
                    pairs.add((lo, hi, axis))

    out = np.array(sorted(pairs), dtype=np.int64)
    # exactness audit: high coordinates must equal low + e_axis bitwise
    for p, q, axis in out:
        dv = vertices[q] - vertices[p]
        want = np.zeros(3); want[axis] = 1.0
        if not np.array_equal(dv, want):
            raise MeshFailure(f"inexact periodic pair ({p},{q},axis {axis})")
    return out


# ---------------------------------------------------------------------------
# public builders
# ---------------------------------------------------------------------------

def build_unit_cell(spec: GeometrySpec):
    """Fitted periodic mesh of the unit cell plus its interface."""
    spec.validate()
    if spec.kind == "Disk2D":
        mesh, surf = _build_disk(spec)
    elif spec.kind == "Layered2D":
        mesh, surf = _build_layered(spec)
    else:
        mesh, surf = _build_tube(spec)

    total = simplex_volumes(mesh.vertices, mesh.simplices).sum()
    if abs(total - 1.0) > 1e-12:
        raise MeshFailure(f"cell volume sums to {total!r}, not 1")
    if len(surf.facets) < 8 * surf.n_components:
        raise MeshFailure("interface resolution below 8 facets per component")
    return mesh, surf


def tile_micro_domain(mesh: CellMesh, surf: SurfaceMesh, eps: float,
                      strip_boundary_inclusions: bool = True,
                      inclusions_disconnected: bool = None):
    """Tile a unit cell mesh eps-periodically over the unit domain.

    eps must be the reciprocal of an integer.  For disconnected inclusion
    geometries the inclusions of cells touching the outer boundary are
    re-labelled as matrix material (stripped) so that no inclusion meets
    the boundary; pass strip_boundary_inclusions=False to keep them.
    """
    m = int(round(1.0 / eps))
    if m < 1 or abs(m * eps - 1.0) > 1e-12:
        raise NonIntegerTiling(f"eps={eps} is not a reciprocal integer")
    dim = mesh.dim
    nv = mesh.vertices.shape[0]

    if inclusions_disconnected is None:
        # membranes only exist around disconnected inclusions
        inclusions_disconnected = bool(np.any(mesh.phase == PHASE_MEMBRANE)) or _looks_disconnected(mesh, surf)

    # canonicalization of local vertices across cell boundaries
    high_map = {}
    for p, q, axis in mesh.periodic_pairs:
        high_map.setdefault(int(q), []).append((int(axis), int(p)))

    cells = list(np.ndindex(*([m] * dim)))
    cell_no = {c: i for i, c in enumerate(cells)}

    def canonical(cell, v):
        cell = list(cell)
        moved = True
        while moved:
            moved = False
            for axis, low in high_map.get(v, []):
                if cell[axis] + 1 < m:
                    cell[axis] += 1
                    v = low
                    moved = True
                    break
        return tuple(cell), v

    gidx = {}
    positions = []
    local_global = np.empty((len(cells), nv), dtype=np.int64)
    base_int = np.asarray(mesh.vertices, dtype=float)
    for ci, cell in enumerate(cells):
        off = np.array(cell, dtype=float)
        for v in range(nv):
            key = canonical(cell, v)
            g = gidx.get(key)
            if g is None:
                g = len(positions)
                gidx[key] = g
                oc = np.array(key[0], dtype=float)
                positions.append((base_int[key[1]] + oc) / m)
            local_global[ci, v] = g
    vertices = np.array(positions)

    ne = mesh.simplices.shape[0]
    simplices = np.empty((len(cells) * ne, dim + 1), dtype=np.int64)
    phase = np.empty(len(cells) * ne, dtype=np.int64)
    stripped = np.zeros(len(cells), dtype=bool)
    for ci, cell in enumerate(cells):
        sl = slice(ci * ne, (ci + 1) * ne)
        simplices[sl] = local_global[ci][mesh.simplices]
        ph = mesh.phase.copy()
        on_boundary = any(c == 0 or c == m - 1 for c in cell)
        if strip_boundary_inclusions and inclusions_disconnected and on_boundary:
            ph[ph == PHASE_INT] = PHASE_OUT
            ph[ph == PHASE_MEMBRANE] = PHASE_OUT
            stripped[ci] = True
        phase[sl] = ph

    boundary = np.where(np.any((vertices == 0.0) | (vertices == 1.0), axis=1))[0]
    micro = MicroMesh(vertices=vertices, simplices=simplices, phase=phase,
                      eps=eps, boundary_vertices=boundary,
                      eta=getattr(mesh, "eta", 0.0))

    if np.all(phase == PHASE_OUT):
        micro_surf = SurfaceMesh(facets=np.zeros((0, dim), dtype=np.int64),
                                 normals=np.zeros((0, dim)),
                                 component=np.zeros(0, dtype=np.int64),
                                 measures=np.zeros(0),
                                 adjacency=np.zeros((0, 2), dtype=np.int64))
    else:
        micro_surf = extract_interface(vertices, simplices, phase, None)

    vol = micro.volumes().sum()
    if abs(vol - 1.0) > 1e-12:
        raise MeshFailure(f"tiled domain volume sums to {vol!r}, not 1")
    return micro, micro_surf


def _looks_disconnected(mesh: CellMesh, surf: SurfaceMesh) -> bool:
    """Inclusions are isolated particles iff the inner phase stays strictly
    inside the cell; a phase reaching the cell boundary continues into the
    neighboring copy and must never be stripped."""
    inner = mesh.simplices[mesh.phase == PHASE_INT]
    if len(inner) == 0:
        return False
    pts = mesh.vertices[np.unique(inner)]
    touches = np.any((np.abs(pts) <= 1e-12) | (np.abs(pts - 1.0) <= 1e-12))
    return not bool(touches)
