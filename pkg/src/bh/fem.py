"""P1 finite element kernels on fitted simplicial meshes.

Bulk operators live on periodic or plain vertex degrees of freedom; a dof
map folds paired periodic vertices onto shared unknowns.  Surface operators
discretize the tangential (interface) gradient on the facet triangulation,
using intrinsic facet coordinates, and agree with the projected gradient
(I - nu nu^T) grad up to roundoff.

Constrained solves come in two flavours: a single dense Lagrange row for
mean-zero problems (volume weights for bulk, per-component surface weights
on interfaces) and row elimination for Dirichlet conditions.  Direct
factorizations (SuperLU) serve the small cell problems; micro sweeps use
diagonally preconditioned conjugate gradients.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (DegenerateFacet, MissingAdjacency, NonpositiveCoefficient,
                     SingularSystem, SolverFailure)

_FACT = {1: 1.0, 2: 2.0, 3: 6.0}


# ---------------------------------------------------------------------------
# dof maps
# ---------------------------------------------------------------------------

def identity_dof_map(n_vertices: int) -> np.ndarray:
    return np.arange(n_vertices, dtype=np.int64)


def periodic_dof_map(n_vertices: int, periodic_pairs: np.ndarray) -> np.ndarray:
    """Vertex -> dof map identifying periodic partners (union-find roots)."""
    parent = np.arange(n_vertices, dtype=np.int64)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for p, q, _ in periodic_pairs:
        ra, rb = find(int(p)), find(int(q))
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(n_vertices)])
    uniq, inv = np.unique(roots, return_inverse=True)
    return inv.astype(np.int64)


def n_dofs(vdof: np.ndarray) -> int:
    return int(vdof.max()) + 1 if len(vdof) else 0


# ---------------------------------------------------------------------------
# bulk P1 kernels
# ---------------------------------------------------------------------------

def element_gradients(vertices: np.ndarray, simplices: np.ndarray):
    """Gradients of the barycentric basis and signed volumes.

    Returns (grads, vols) with grads[e, i] the constant gradient of the
    basis function of local vertex i on element e.
    """
    dim = vertices.shape[1]
    p0 = vertices[simplices[:, 0]]
    E = vertices[simplices[:, 1:]] - p0[:, None, :]   # (ne, dim, dim)
    vols = np.linalg.det(E) / _FACT[dim]
    Einv = np.linalg.inv(E)                            # rows of Einv.T are grads
    g = np.transpose(Einv, (0, 2, 1))                  # (ne, dim, dim)
    g0 = -g.sum(axis=1, keepdims=True)
    return np.concatenate([g0, g], axis=1), vols


def _check_coeff(coeff: np.ndarray, allow_zero: bool):
    if np.any(coeff < 0.0) or (not allow_zero and np.any(coeff == 0.0)):
        raise NonpositiveCoefficient("conductivity must be positive on every element")


def phase_coefficient(phase: np.ndarray, values: dict) -> np.ndarray:
    """Per-element coefficient array from a phase -> value table."""
    coeff = np.zeros(len(phase))
    for ph, val in values.items():
        coeff[phase == ph] = val
    return coeff


def assemble_stiffness(vertices, simplices, coeff, vdof, ndof,
                       allow_zero=False) -> sp.csr_matrix:
    """Bulk stiffness sum_K coeff_K int_K grad phi_p . grad phi_q."""
    coeff = np.asarray(coeff, dtype=float)
    _check_coeff(coeff, allow_zero)
    grads, vols = element_gradients(vertices, simplices)
    w = np.abs(vols) * coeff
    kloc = np.einsum("e,eik,ejk->eij", w, grads, grads)
    dofs = vdof[simplices]
    npv = simplices.shape[1]
    rows = np.repeat(dofs, npv, axis=1).ravel()
    cols = np.tile(dofs, (1, npv)).ravel()
    K = sp.coo_matrix((kloc.ravel(), (rows, cols)), shape=(ndof, ndof))
    return K.tocsr()


def assemble_gradient_load(vertices, simplices, coeff, vecs, vdof, ndof) -> np.ndarray:
    """Load b_p = sum_K coeff_K |K| vec_K . grad phi_p.

    With vec_K = e_j this is the weak divergence of the coefficient field
    against the direction j, the right hand side of every corrector solve.
    """
    grads, vols = element_gradients(vertices, simplices)
    w = np.abs(vols) * np.asarray(coeff, dtype=float)
    contrib = np.einsum("e,eik,ek->ei", w, grads, np.asarray(vecs, dtype=float))
    b = np.zeros(ndof)
    np.add.at(b, vdof[simplices].ravel(), contrib.ravel())
    return b


def volume_dof_weights(vertices, simplices, vdof, ndof) -> np.ndarray:
    """w_p = int phi_p over the whole mesh (exact for P1)."""
    _, vols = element_gradients(vertices, simplices)
    npv = simplices.shape[1]
    w = np.zeros(ndof)
    contrib = np.repeat(np.abs(vols)[:, None] / npv, npv, axis=1)
    np.add.at(w, vdof[simplices].ravel(), contrib.ravel())
    return w


def lumped_load(vertices, simplices, node_values, vdof, ndof) -> np.ndarray:
    """Vertex-lumped right hand side int f phi_p with f given at vertices."""
    _, vols = element_gradients(vertices, simplices)
    npv = simplices.shape[1]
    vals = node_values[simplices]
    contrib = np.abs(vols)[:, None] / npv * vals
    b = np.zeros(ndof)
    np.add.at(b, vdof[simplices].ravel(), contrib.ravel())
    return b


def mass_quadratic(vertices, simplices, node_values) -> float:
    """Exact int u^2 for the P1 field with the given vertex values."""
    _, vols = element_gradients(vertices, simplices)
    u = node_values[simplices]
    npv = simplices.shape[1]
    s = u.sum(axis=1)
    q = (s ** 2 + (u ** 2).sum(axis=1)) / ((npv) * (npv + 1))
    return float((np.abs(vols) * q).sum())


def element_field_gradients(vertices, simplices, node_values) -> np.ndarray:
    """Constant per-element gradient of a P1 field (vertex values)."""
    grads, _ = element_gradients(vertices, simplices)
    return np.einsum("eik,ei->ek", grads, node_values[simplices])


# ---------------------------------------------------------------------------
# surface P1 kernels (tangential calculus on the facet triangulation)
# ---------------------------------------------------------------------------

def surface_gradients(vertices, facets):
    """Intrinsic tangential gradients of the facet basis functions.

    Returns (grads, measures): grads[f, i] is the gradient (a vector of
    R^N tangent to facet f) of the basis function of local vertex i.
    Raises DegenerateFacet for facets below measure 1e-14.
    """
    pts = vertices[facets]
    if facets.shape[1] == 2:
        t = pts[:, 1] - pts[:, 0]
        L = np.linalg.norm(t, axis=1)
        if np.any(L < 1e-14):
            raise DegenerateFacet("zero-length interface segment")
        g1 = t / (L ** 2)[:, None]
        return np.stack([-g1, g1], axis=1), L

    e1 = pts[:, 1] - pts[:, 0]
    e2 = pts[:, 2] - pts[:, 0]
    nrm = np.cross(e1, e2)
    area = 0.5 * np.linalg.norm(nrm, axis=1)
    if np.any(area < 1e-14):
        raise DegenerateFacet("zero-area interface triangle")
    # orthonormal in-plane frame
    t1 = e1 / np.linalg.norm(e1, axis=1)[:, None]
    t2 = np.cross(nrm, e1)
    t2 /= np.linalg.norm(t2, axis=1)[:, None]
    # planar coordinates and 2x2 inverse of the edge matrix
    a = np.einsum("fk,fk->f", e1, t1)
    b1 = np.einsum("fk,fk->f", e2, t1)
    b2 = np.einsum("fk,fk->f", e2, t2)
    det = a * b2
    # grads of barycentric coords 1 and 2 in planar frame
    g1p = np.stack([b2 / det, -b1 / det], axis=1)
    g2p = np.stack([np.zeros_like(a), a / det], axis=1)
    lift = lambda gp: gp[:, 0:1] * t1 + gp[:, 1:2] * t2
    g1 = lift(g1p)
    g2 = lift(g2p)
    g0 = -(g1 + g2)
    return np.stack([g0, g1, g2], axis=1), area


def projected_surface_gradients(vertices, facets):
    """Tangential gradients through min-norm affine extensions.

    Independent route kept as a cross-check of surface_gradients: for each
    basis function solve the underdetermined system  (p_i - p_0) . g = d_i
    with the pseudoinverse, which lands in the tangent plane automatically.
    """
    pts = vertices[facets]
    nf, npf, dim = pts.shape
    A = pts[:, 1:, :] - pts[:, 0:1, :]
    pinv = np.linalg.pinv(A)
    grads = np.empty((nf, npf, dim))
    for i in range(npf):
        d = np.zeros((nf, npf - 1))
        if i == 0:
            d[:, :] = -1.0
        else:
            d[:, i - 1] = 1.0
        grads[:, i, :] = np.einsum("fkj,fj->fk", pinv, d)
    return grads


def assemble_surface_stiffness(vertices, facets, coeff, vdof, ndof) -> sp.csr_matrix:
    coeff = np.asarray(coeff, dtype=float) * np.ones(len(facets))
    grads, meas = surface_gradients(vertices, facets)
    w = meas * coeff
    sloc = np.einsum("f,fik,fjk->fij", w, grads, grads)
    dofs = vdof[facets]
    npf = facets.shape[1]
    rows = np.repeat(dofs, npf, axis=1).ravel()
    cols = np.tile(dofs, (1, npf)).ravel()
    S = sp.coo_matrix((sloc.ravel(), (rows, cols)), shape=(ndof, ndof))
    return S.tocsr()


def surface_gradient_load(vertices, facets, coeff, vecs, vdof, ndof) -> np.ndarray:
    """Load L_p = sum_f coeff_f |f| vec_f . grad_B phi_p."""
    grads, meas = surface_gradients(vertices, facets)
    w = meas * (np.asarray(coeff, dtype=float) * np.ones(len(facets)))
    contrib = np.einsum("f,fik,fk->fi", w, grads, np.asarray(vecs, dtype=float))
    L = np.zeros(ndof)
    np.add.at(L, vdof[facets].ravel(), contrib.ravel())
    return L


def surface_dof_weights(vertices, facets, vdof, ndof) -> np.ndarray:
    """w_p = int_Gamma phi_p over the given facets."""
    meas = facet_measures_cached(vertices, facets)
    npf = facets.shape[1]
    contrib = np.repeat(meas[:, None] / npf, npf, axis=1)
    w = np.zeros(ndof)
    np.add.at(w, vdof[facets].ravel(), contrib.ravel())
    return w


def facet_measures_cached(vertices, facets):
    pts = vertices[facets]
    if facets.shape[1] == 2:
        return np.linalg.norm(pts[:, 1] - pts[:, 0], axis=1)
    return 0.5 * np.linalg.norm(np.cross(pts[:, 1] - pts[:, 0],
                                         pts[:, 2] - pts[:, 0]), axis=1)


def facet_field_gradients(vertices, facets, node_values) -> np.ndarray:
    """Tangential gradient of a P1 surface field, one vector per facet."""
    grads, _ = surface_gradients(vertices, facets)
    return np.einsum("fik,fi->fk", grads, node_values[facets])


def facet_mean_values(node_values, facets) -> np.ndarray:
    return node_values[facets].mean(axis=1)


def surface_flux_jump(vertices, simplices, surf, node_values, coeff) -> np.ndarray:
    """Facet-wise jump [coeff grad u . nu] from the adjacent bulk gradients.

    The jump convention is (outer value) - (inner value) with nu pointing
    from the inner phase into the outer one.
    """
    if np.any(surf.adjacency < 0):
        raise MissingAdjacency("surface facet without bulk adjacency")
    grads, _ = element_gradients(vertices, simplices)
    coeff = np.asarray(coeff, dtype=float)

    def side_flux(elems):
        ge = np.einsum("eik,ei->ek", grads[elems], node_values[simplices[elems]])
        return coeff[elems] * np.einsum("fk,fk->f", ge, surf.normals)

    return side_flux(surf.adjacency[:, 1]) - side_flux(surf.adjacency[:, 0])


# ---------------------------------------------------------------------------
# constrained solvers
# ---------------------------------------------------------------------------

def _residual_check(K, x, b, tol=1e-10):
    r = K @ x - b
    scale = max(float(np.linalg.norm(b)), 1e-300)
    rel = float(np.linalg.norm(r)) / scale
    if not np.isfinite(rel) or (rel > tol and np.linalg.norm(b) > 0):
        raise SingularSystem(f"relative residual {rel:.3e} exceeds {tol:.0e}")


class MeanZeroFactor:
    """Factorized bordered system [[K, w], [w^T, 0]] for repeated solves."""

    def __init__(self, K: sp.spmatrix, weights: np.ndarray):
        n = K.shape[0]
        w = sp.csc_matrix(weights.reshape(-1, 1))
        A = sp.bmat([[K.tocsc(), w], [w.T, None]], format="csc")
        try:
            self.lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularSystem(f"bordered factorization failed: {exc}") from exc
        self.K = K.tocsr()
        self.w = weights
        self.n = n

    def solve(self, b: np.ndarray) -> np.ndarray:
        rhs = np.concatenate([b, [0.0]])
        xz = self.lu.solve(rhs)
        x = xz[:self.n]
        # K x + mu w = b, so the unconstrained residual is against b - mu w
        _residual_check(self.K, x, b - xz[self.n] * self.w)
        mean = abs(float(self.w @ x)) / max(float(np.abs(self.w).sum()), 1e-300)
        if mean > 1e-12:
            raise SingularSystem(f"mean-zero constraint violated by {mean:.3e}")
        return x


class DirichletFactor:
    """Factorized reduced system for repeated solves with fixed dofs."""

    def __init__(self, K: sp.spmatrix, fixed: np.ndarray):
        n = K.shape[0]
        self.fixed = np.asarray(fixed, dtype=np.int64)
        mask = np.ones(n, dtype=bool)
        mask[self.fixed] = False
        self.free = np.where(mask)[0]
        Kc = K.tocsc()
        self.K = K.tocsr()
        self.Kff = Kc[self.free][:, self.free]
        self.Kfc = Kc[self.free][:, self.fixed]
        if len(self.free):
            try:
                self.lu = spla.splu(self.Kff.tocsc())
            except RuntimeError as exc:
                raise SingularSystem(f"reduced factorization failed: {exc}") from exc
        self.n = n

    def solve(self, b: np.ndarray, fixed_values=None) -> np.ndarray:
        x = np.zeros(self.n)
        if fixed_values is not None:
            x[self.fixed] = fixed_values
        if not len(self.free):
            return x
        rhs = b[self.free] - (self.Kfc @ x[self.fixed])
        x[self.free] = self.lu.solve(rhs)
        r = self.Kff @ x[self.free] - rhs
        scale = max(float(np.linalg.norm(rhs)), float(np.linalg.norm(b)), 1e-300)
        if float(np.linalg.norm(r)) / scale > 1e-10:
            raise SingularSystem("Dirichlet solve residual above 1e-10")
        return x


def solve_constrained(K, b, constraint="mean", weights=None, fixed=None,
                      fixed_values=None):
    """One-shot constrained solve; see MeanZeroFactor / DirichletFactor."""
    if constraint == "mean":
        return MeanZeroFactor(K, weights).solve(b)
    if constraint == "dirichlet":
        return DirichletFactor(K, fixed).solve(b, fixed_values)
    raise ValueError(f"unknown constraint {constraint!r}")


class CGSolver:
    """Diagonally preconditioned CG on a fixed SPD reduced system."""

    def __init__(self, K: sp.spmatrix, fixed: np.ndarray):
        n = K.shape[0]
        self.fixed = np.asarray(fixed, dtype=np.int64)
        mask = np.ones(n, dtype=bool)
        mask[self.fixed] = False
        self.free = np.where(mask)[0]
        Kc = K.tocsc()
        self.Kff = Kc[self.free][:, self.free].tocsr()
        self.Kfc = Kc[self.free][:, self.fixed].tocsr()
        d = self.Kff.diagonal()
        if np.any(d <= 0):
            raise SingularSystem("nonpositive diagonal in CG system")
        self.M = sp.diags(1.0 / d)
        self.n = n
        self._warm = None

    def solve(self, b, fixed_values=None) -> np.ndarray:
        x = np.zeros(self.n)
        if fixed_values is not None:
            x[self.fixed] = fixed_values
        rhs = b[self.free] - (self.Kfc @ x[self.fixed])
        x0 = self._warm if self._warm is not None else None
        sol, info = spla.cg(self.Kff, rhs, x0=x0, rtol=1e-12, atol=0.0,
                            maxiter=50 * max(1, len(self.free)), M=self.M)
        if info != 0:
            raise SolverFailure(f"CG failed to converge (info={info})")
        r = self.Kff @ sol - rhs
        if np.linalg.norm(r) > 1e-10 * max(np.linalg.norm(rhs), 1e-300):
            raise SolverFailure("CG residual above 1e-10")
        self._warm = sol.copy()
        x[self.free] = sol
        return x
