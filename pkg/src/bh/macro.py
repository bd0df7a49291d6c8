"""Macroscopic limit problems on the unit domain.

The k = 1 limit is a memory equation: the flux at time t combines an
instantaneous part (lambda0 I + A0) grad u, a surface-capacity part
C0 grad u_t (only when the inclusion phase connects), and a convolution
with the kernel B0.  Implicit Euler with a trapezoidal history sum gives
the step system

    [K_C0/dt + K_A + (dt/2) K_B0(0)] u^n =
        K_C0/dt u^(n-1) - dt sum_(0<m<n) K_B0(t_n - t_m) u^m
        - (dt/2) K_B0(t_n) u^0 + F^n

where K_M is the stiffness matrix with constant tensor coefficient M.
The kernel samples are resampled onto the macro grid by linear
interpolation.  For disconnected inclusions C0 = 0, u has no initial
condition, and the march starts at n = 1 with an empty history.

The k != 1 limits are elliptic problems solved level by level.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .errors import SingularStep, WrongGeometryClass
from .timegrid import TimeGrid

REGIMES = ("k1_connected_connected", "k1_connected_disconnected", "klt1", "kgt1")

_KUHN_PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


# ---------------------------------------------------------------------------
# structured macroscopic meshes
# ---------------------------------------------------------------------------

@dataclass
class MacroMesh:
    vertices: np.ndarray
    simplices: np.ndarray
    boundary: np.ndarray   # vertex ids on the outer boundary
    n: int
    dim: int

    def interior(self):
        mask = np.ones(len(self.vertices), dtype=bool)
        mask[self.boundary] = False
        return np.where(mask)[0]


def build_macro_mesh(n: int, dim: int = 2) -> MacroMesh:
    """Uniform simplicial grid on the unit square or cube.

    2D cells are split along the same diagonal everywhere, which keeps
    point location analytic.
    """
    lin = np.arange(n + 1) / n
    lin[-1] = 1.0
    if dim == 2:
        vid = lambda i, j: j * (n + 1) + i
        vertices = np.array([[lin[i], lin[j]]
                             for j in range(n + 1) for i in range(n + 1)])
        tris = []
        for j in range(n):
            for i in range(n):
                v00, v10 = vid(i, j), vid(i + 1, j)
                v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
        simplices = np.array(tris, dtype=np.int64)
    elif dim == 3:
        vid = lambda i, j, k: (i * (n + 1) + j) * (n + 1) + k
        vertices = np.array([[lin[i], lin[j], lin[k]]
                             for i in range(n + 1)
                             for j in range(n + 1)
                             for k in range(n + 1)])
        tets = []
        eye = np.eye(3, dtype=int)
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    base = np.array([i, j, k])
                    for perm in _KUHN_PERMS:
                        vs = [base.copy()]
                        cur = base.copy()
                        for ax in perm:
                            cur = cur + eye[ax]
                            vs.append(cur.copy())
                        tets.append([vid(*v) for v in vs])
        simplices = np.array(tets, dtype=np.int64)
    else:
        raise ValueError("macro mesh dimension must be 2 or 3")

    boundary = np.where(np.any((vertices == 0.0) | (vertices == 1.0), axis=1))[0]
    return MacroMesh(vertices=vertices, simplices=simplices, boundary=boundary,
                     n=n, dim=dim)


def evaluate_macro(mesh: MacroMesh, nodal: np.ndarray, points: np.ndarray) -> np.ndarray:
    """P1 evaluation at arbitrary interior points of the structured mesh."""
    n = mesh.n
    if mesh.dim != 2:
        raise NotImplementedError("analytic point location is 2D only")
    x = np.clip(points[:, 0], 0.0, 1.0 - 1e-15)
    y = np.clip(points[:, 1], 0.0, 1.0 - 1e-15)
    i = np.minimum((x * n).astype(int), n - 1)
    j = np.minimum((y * n).astype(int), n - 1)
    xi = x * n - i
    eta = y * n - j
    vid = lambda a, b: b * (n + 1) + a
    v00 = nodal[vid(i, j)]
    v10 = nodal[vid(i + 1, j)]
    v01 = nodal[vid(i, j + 1)]
    v11 = nodal[vid(i + 1, j + 1)]
    lower = eta <= xi
    out = np.where(lower,
                   v00 * (1 - xi) + v10 * (xi - eta) + v11 * eta,
                   v00 * (1 - eta) + v11 * xi + v01 * (eta - xi))
    return out


# ---------------------------------------------------------------------------
# problem container
# ---------------------------------------------------------------------------

@dataclass
class MacroProblem:
    mesh: MacroMesh
    regime: str
    grid: TimeGrid
    lambda0: float = 1.0
    A0: np.ndarray = None
    C0: np.ndarray = None
    B0: np.ndarray = None          # kernel samples (L+1, N, N)
    kernel_grid: TimeGrid = None
    F_coeffs: np.ndarray = None    # Phi samples (L+1, N, N)
    u0_bar: np.ndarray = None      # nodal initial macro state
    source: object = None          # callable f(points, t) -> nodal values
    A_elliptic: np.ndarray = None  # tensor for the k != 1 regimes
    topology: str = "cd"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise WrongGeometryClass(f"unknown regime {self.regime!r}")


@dataclass
class TransientField:
    levels: np.ndarray             # (M+1, nv), Dirichlet nodes exactly zero
    grid: TimeGrid
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# assembly helpers
# ---------------------------------------------------------------------------

def _component_stiffness(mesh: MacroMesh):
    """K_ab with entries int d_a phi_p d_b phi_q, one matrix per (a, b).

    Any constant-tensor stiffness is then K_M = sum_ab M_ab K_ab, so the
    memory sum only needs matrix-vector products with N^2 fixed matrices.
    """
    V, S = mesh.vertices, mesh.simplices
    grads, vols = fem.element_gradients(V, S)
    w = np.abs(vols)
    nv = len(V)
    dim = mesh.dim
    npv = dim + 1
    dofs = S
    rows = np.repeat(dofs, npv, axis=1).ravel()
    cols = np.tile(dofs, (1, npv)).ravel()
    mats = {}
    for a in range(dim):
        for b in range(dim):
            kloc = np.einsum("e,ei,ej->eij", w, grads[:, :, a], grads[:, :, b])
            mats[(a, b)] = sp.coo_matrix((kloc.ravel(), (rows, cols)),
                                         shape=(nv, nv)).tocsr()
    return mats


def _tensor_stiffness(mats, M):
    dim = M.shape[0]
    K = None
    for a in range(dim):
        for b in range(dim):
            if M[a, b] == 0.0:
                continue
            term = M[a, b] * mats[(a, b)]
            K = term if K is None else K + term
    if K is None:
        n = mats[(0, 0)].shape[0]
        K = sp.csr_matrix((n, n))
    return K


def _factor_spd(A_ff, label):
    """Factor a symmetric matrix, insisting on positive definiteness.

    With diagonal pivoting disabled the U diagonal of the LU factorization
    carries the LDL^T pivots, so any nonpositive entry exposes an
    indefinite or singular step matrix.
    """
    asym = abs(A_ff - A_ff.T).max() if A_ff.nnz else 0.0
    if asym > 1e-10 * max(abs(A_ff).max(), 1e-300):
        raise SingularStep(f"{label} lost symmetry")
    try:
        lu = spla.splu(A_ff.tocsc(), diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise SingularStep(f"{label} is singular: {exc}") from exc
    if lu.U.diagonal().min() <= 0.0:
        raise SingularStep(f"{label} is not positive definite")
    return lu


def _resample_kernel(samples, kernel_grid: TimeGrid, lags: np.ndarray):
    """Linear interpolation of tensor samples at the requested lags."""
    tk = kernel_grid.times
    if lags.max() > tk[-1] + 1e-12:
        raise ValueError(
            f"macro horizon {lags.max():.3f} exceeds kernel horizon {tk[-1]:.3f}")
    L1, N, _ = samples.shape
    out = np.empty((len(lags), N, N))
    for a in range(N):
        for b in range(N):
            out[:, a, b] = np.interp(lags, tk, samples[:, a, b])
    return out


# ---------------------------------------------------------------------------
# memory stepper (k = 1)
# ---------------------------------------------------------------------------

def solve_homogenized_memory(problem: MacroProblem) -> TransientField:
    mesh = problem.mesh
    grid = problem.grid
    dim = mesh.dim
    dt = grid.step
    M = grid.n_steps
    nv = len(mesh.vertices)
    connected = problem.regime == "k1_connected_connected"

    mats = _component_stiffness(mesh)
    A_inst = problem.lambda0 * np.eye(dim) + (
        problem.A0 if problem.A0 is not None else 0.0)
    K_A = _tensor_stiffness(mats, A_inst)
    C0 = problem.C0 if (connected and problem.C0 is not None) else np.zeros((dim, dim))
    K_C = _tensor_stiffness(mats, C0)

    if problem.B0 is not None:
        lags = dt * np.arange(M + 1)
        B_res = _resample_kernel(problem.B0, problem.kernel_grid, lags)
    else:
        B_res = np.zeros((M + 1, dim, dim))
    if problem.F_coeffs is not None:
        Phi_res = _resample_kernel(problem.F_coeffs, problem.kernel_grid,
                                   dt * np.arange(M + 1))
    else:
        Phi_res = None

    free = mesh.interior()
    step_mat = (K_C / dt + K_A + (dt / 2.0) * _tensor_stiffness(mats, B_res[0]))
    A_ff = step_mat.tocsc()[free][:, free]
    lu = _factor_spd(A_ff, "macro step matrix")

    V, S = mesh.vertices, mesh.simplices
    grads, vols = fem.element_gradients(V, S)
    w_el = np.abs(vols)

    grad_u0 = None
    if Phi_res is not None and problem.u0_bar is not None:
        grad_u0 = np.einsum("eik,ei->ek", grads, problem.u0_bar[S])

    def weak_divergence_load(vec_el):
        contrib = np.einsum("e,eik,ek->ei", w_el, grads, vec_el)
        b = np.zeros(nv)
        np.add.at(b, S.ravel(), contrib.ravel())
        return b

    U = np.zeros((M + 1, nv))
    if connected:
        if problem.u0_bar is None:
            raise SingularStep("connected regime requires initial data")
        U[0] = problem.u0_bar
        U[0, mesh.boundary] = 0.0

    energy = np.empty(M + 1)
    energy[0] = float(U[0] @ (K_A @ U[0]))
    for n in range(1, M + 1):
        rhs = (K_C @ U[n - 1]) / dt
        if problem.B0 is not None and n >= 1:
            # trapezoidal history: interior levels weight dt, level 0 dt/2
            acc = np.zeros((dim, dim, nv))
            for m in range(1, n):
                acc += B_res[n - m][:, :, None] * U[m][None, None, :]
            hist = np.zeros(nv)
            for a in range(dim):
                for b in range(dim):
                    if np.any(acc[a, b]):
                        hist += mats[(a, b)] @ (dt * acc[a, b])
            if connected and np.any(U[0]):
                KB = _tensor_stiffness(mats, B_res[n])
                hist += (dt / 2.0) * (KB @ U[0])
            rhs -= hist
        if Phi_res is not None and grad_u0 is not None:
            vec = -np.einsum("jh,ej->eh", Phi_res[n], grad_u0)
            rhs += weak_divergence_load(vec)
        if problem.source is not None:
            fvals = problem.source(V, grid.times[n])
            rhs += fem.lumped_load(V, S, fvals, fem.identity_dof_map(nv), nv)
        U[n, free] = lu.solve(rhs[free])
        r = A_ff @ U[n, free] - rhs[free]
        if np.linalg.norm(r) > 1e-8 * max(np.linalg.norm(rhs[free]), 1e-300):
            raise SingularStep(f"macro step {n} residual too large")
        energy[n] = float(U[n] @ (K_A @ U[n]))

    return TransientField(levels=U, grid=grid,
                          diagnostics={"energy": energy})


# ---------------------------------------------------------------------------
# elliptic regimes (k != 1)
# ---------------------------------------------------------------------------

def solve_homogenized_elliptic(problem: MacroProblem) -> TransientField:
    """Stationary limit problems, one solve per requested time level."""
    mesh = problem.mesh
    grid = problem.grid
    nv = len(mesh.vertices)
    M = grid.n_steps

    if problem.regime == "klt1" and problem.topology == "cc":
        # slow surfaces on a connected inclusion phase freeze the limit
        U = np.zeros((M + 1, nv))
        return TransientField(levels=U, grid=grid,
                              diagnostics={"degenerate_zero_limit": True})
    if problem.regime not in ("klt1", "kgt1"):
        raise WrongGeometryClass(f"elliptic solver got regime {problem.regime}")

    mats = _component_stiffness(mesh)
    K = _tensor_stiffness(mats, problem.A_elliptic)
    free = mesh.interior()
    K_ff = K.tocsc()[free][:, free]
    lu = _factor_spd(K_ff, "elliptic macro matrix")

    V, S = mesh.vertices, mesh.simplices
    U = np.zeros((M + 1, nv))
    for n in range(M + 1):
        if problem.source is None:
            break
        fvals = problem.source(V, grid.times[n])
        b = fem.lumped_load(V, S, fvals, fem.identity_dof_map(nv), nv)
        U[n, free] = lu.solve(b[free])
    return TransientField(levels=U, grid=grid,
                          diagnostics={"degenerate_zero_limit": False})
