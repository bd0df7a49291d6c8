"""Direct solvers on the eps-periodic microstructure.

solve_micro marches the dynamic-interface problem for any surface scaling
exponent k: the bulk diffusion operator is coupled to a Laplace-Beltrami
stiffness on the inclusion boundaries weighted by eps^k alpha.  The initial
state extends the scaled initial datum harmonically from the interface, the
same initialization the cell evolutions use, so with eps = 1 and periodic
data the two operators coincide.

solve_membrane replaces the sharp interface by a thick band of relative
width eta carrying a pseudo-parabolic bulk coefficient alpha/eta; as eta
shrinks the band concentrates onto the interface condition above.

local_average is the per-cell volume average used as the computable
surrogate for two-scale convergence, and the study drivers sweep eps or
eta and report L2(0,T; Omega) error sequences with a monotone-decrease
verdict.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import fem, geometry, macro
from .cell import CellCoefficients
from .errors import SolverFailure, WrongGeometryClass
from .geometry import (PHASE_INT, PHASE_MEMBRANE, PHASE_OUT, MicroMesh,
                       extract_interface, tile_micro_domain)
from .macro import TransientField
from .timegrid import TimeGrid

_SPLU_DOF_LIMIT = 60000  # beyond this, step systems go to warm-started CG


# ---------------------------------------------------------------------------
# run descriptions
# ---------------------------------------------------------------------------

@dataclass
class MicroRun:
    mesh: MicroMesh
    coeffs: CellCoefficients
    k: float
    grid: TimeGrid
    u0_bar: object = None          # callable points -> values, or None
    source: object = None          # callable (points, t) -> values, or None
    periodic_pairs: np.ndarray = None  # switch to periodic/mean-zero mode


@dataclass
class MembraneRun:
    mesh: MicroMesh                # tiled membrane cell, mesh.eta > 0
    coeffs: CellCoefficients
    grid: TimeGrid
    u0_bar: object = None


# ---------------------------------------------------------------------------
# dynamic-interface micro solver
# ---------------------------------------------------------------------------

def _step_solver(M, fixed, nd):
    if nd - len(fixed) <= _SPLU_DOF_LIMIT:
        return fem.DirichletFactor(M, fixed)
    return fem.CGSolver(M, fixed)


def solve_micro(run: MicroRun) -> TransientField:
    mesh = run.mesh
    V, S, phase = mesh.vertices, mesh.simplices, mesh.phase
    if np.any(phase == PHASE_MEMBRANE):
        raise WrongGeometryClass("solve_micro expects a sharp two-phase mesh")
    coeffs = run.coeffs
    grid = run.grid
    dt = grid.step
    eps = mesh.eps
    surf_scale = eps ** run.k * coeffs.alpha
    init_scale = eps ** ((1.0 - run.k) / 2.0)

    periodic = run.periodic_pairs is not None
    if periodic:
        vdof = fem.periodic_dof_map(len(V), run.periodic_pairs)
    else:
        vdof = fem.identity_dof_map(len(V))
    nd = fem.n_dofs(vdof)

    lam = fem.phase_coefficient(phase, {PHASE_INT: coeffs.lam_int,
                                        PHASE_OUT: coeffs.lam_out})
    K = fem.assemble_stiffness(V, S, lam, vdof, nd)
    K_unit = fem.assemble_stiffness(V, S, np.ones(len(S)), vdof, nd)
    if np.all(phase == phase[0]):
        # boundary stripping can empty the geometry entirely; the march
        # degenerates to quasi-static diffusion with no surface memory
        S1 = sp.csr_matrix((nd, nd))
        gamma = np.empty(0, dtype=np.int64)
    else:
        surf = extract_interface(V, S, phase,
                                 run.periodic_pairs if periodic else None)
        S1 = fem.assemble_surface_stiffness(V, surf.facets,
                                            np.ones(len(surf.facets)), vdof, nd)
        gamma = np.unique(vdof[surf.facets])

    if periodic:
        fixed = np.empty(0, dtype=np.int64)
        vol_w = fem.volume_dof_weights(V, S, vdof, nd)
    else:
        fixed = np.unique(vdof[mesh.boundary_vertices])

    # initial state: harmonic extension of the scaled interface trace
    x0 = np.zeros(nd)
    if run.u0_bar is not None and len(gamma):
        vals = np.asarray(run.u0_bar(V), dtype=float)
        trace = np.zeros(nd)
        trace[vdof] = vals
        fixed0 = np.union1d(gamma, fixed)
        fv = init_scale * trace[fixed0]
        fv[np.isin(fixed0, fixed)] = 0.0
        x0 = fem.DirichletFactor(K, fixed0).solve(np.zeros(nd), fv)
        if periodic:
            x0 -= vol_w @ x0

    c = surf_scale / dt
    M = (K + c * S1).tocsr()
    if periodic:
        stepper = fem.MeanZeroFactor(M, vol_w)
        solve = lambda rhs: stepper.solve(rhs)
    else:
        fac = _step_solver(M, fixed, nd)
        zeros_fixed = np.zeros(len(fixed))
        solve = lambda rhs: fac.solve(rhs, zeros_fixed)

    n_steps = grid.n_steps
    X = np.zeros((n_steps + 1, nd))
    X[0] = x0
    surf_energy = np.empty(n_steps + 1)
    surf_energy[0] = surf_scale * float(x0 @ (S1 @ x0))
    bulk_l2t = 0.0
    for n in range(1, n_steps + 1):
        rhs = c * (S1 @ X[n - 1])
        if run.source is not None:
            fvals = np.asarray(run.source(V, grid.times[n]), dtype=float)
            rhs = rhs + fem.lumped_load(V, S, fvals, vdof, nd)
        try:
            X[n] = solve(rhs)
        except Exception as exc:
            raise SolverFailure(f"micro step {n} failed: {exc}") from exc
        surf_energy[n] = surf_scale * float(X[n] @ (S1 @ X[n]))
        bulk_l2t += dt * float(X[n] @ (K_unit @ X[n]))

    levels = X[:, vdof]
    return TransientField(
        levels=levels, grid=grid,
        diagnostics={
            "surface_energy": surf_energy,
            "energy_bulk": bulk_l2t,
            "energy_surface": (eps ** run.k) * float(np.max(
                [X[n] @ (S1 @ X[n]) for n in range(n_steps + 1)])),
        })


# ---------------------------------------------------------------------------
# thick-membrane solver
# ---------------------------------------------------------------------------

def solve_membrane(run: MembraneRun) -> TransientField:
    mesh = run.mesh
    if mesh.eta <= 0.0 or not np.any(mesh.phase == PHASE_MEMBRANE):
        raise WrongGeometryClass("solve_membrane expects a tiled membrane mesh")
    V, S, phase = mesh.vertices, mesh.simplices, mesh.phase
    coeffs = run.coeffs
    grid = run.grid
    dt = grid.step
    nv = len(V)
    vdof = fem.identity_dof_map(nv)

    lam = fem.phase_coefficient(phase, {PHASE_INT: coeffs.lam_int,
                                        PHASE_OUT: coeffs.lam_out,
                                        PHASE_MEMBRANE: 0.0})
    tilde = fem.phase_coefficient(phase, {PHASE_INT: 0.0, PHASE_OUT: 0.0,
                                          PHASE_MEMBRANE: coeffs.alpha / mesh.eta})
    K_lam = fem.assemble_stiffness(V, S, lam, vdof, nv, allow_zero=True)
    K_til = fem.assemble_stiffness(V, S, tilde, vdof, nv, allow_zero=True)
    boundary = np.unique(mesh.boundary_vertices)

    # initial state: nodal initial datum inside the band, lambda-harmonic
    # extension outside, so the membrane gradient matches grad u0_bar
    x0 = np.zeros(nv)
    band_verts = np.unique(S[phase == PHASE_MEMBRANE])
    if run.u0_bar is not None and len(band_verts):
        vals = np.asarray(run.u0_bar(V), dtype=float)
        fixed0 = np.union1d(band_verts, boundary)
        fv = vals[fixed0]
        fv[np.isin(fixed0, boundary)] = 0.0
        x0 = fem.DirichletFactor(K_lam, fixed0).solve(np.zeros(nv), fv)

    M = (K_lam + K_til / dt).tocsr()
    fac = _step_solver(M, boundary, nv)
    zeros_fixed = np.zeros(len(boundary))

    n_steps = grid.n_steps
    X = np.zeros((n_steps + 1, nv))
    X[0] = x0
    K_unit = fem.assemble_stiffness(V, S, np.ones(len(S)), vdof, nv)
    band_energy = np.empty(n_steps + 1)
    band_energy[0] = float(x0 @ (K_til @ x0)) / coeffs.alpha
    bulk_l2t = 0.0
    for n in range(1, n_steps + 1):
        rhs = (K_til @ X[n - 1]) / dt
        try:
            X[n] = fac.solve(rhs, zeros_fixed)
        except Exception as exc:
            raise SolverFailure(f"membrane step {n} failed: {exc}") from exc
        band_energy[n] = float(X[n] @ (K_til @ X[n])) / coeffs.alpha
        bulk_l2t += dt * float(X[n] @ (K_unit @ X[n]))

    return TransientField(
        levels=X, grid=grid,
        diagnostics={
            "membrane_energy": band_energy,
            "energy_bulk": bulk_l2t,
            "energy_surface": float(band_energy.max()) * mesh.eta,
        })


# ---------------------------------------------------------------------------
# local averages and norms
# ---------------------------------------------------------------------------

@dataclass
class CellAverages:
    """Piecewise-constant per-cell averages of a transient field."""

    values: np.ndarray   # (levels, m**dim)
    m: int
    dim: int
    grid: TimeGrid

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        idx = np.minimum((points * self.m).astype(int), self.m - 1)
        flat = np.ravel_multi_index(tuple(idx.T), (self.m,) * self.dim)
        return self.values[:, flat]


def local_average(fld: TransientField, mesh: MicroMesh) -> CellAverages:
    """Exact per-cell volume averages of a P1 field, one value per eps-cell.

    With 1/eps integer every cell lies inside the domain, so the average
    is defined (and nonzero) on the full cell grid.
    """
    m = int(round(1.0 / mesh.eps))
    dim = mesh.dim
    V, S = mesh.vertices, mesh.simplices
    vols = np.abs(geometry.simplex_volumes(V, S))
    cent = V[S].mean(axis=1)
    idx = np.minimum((cent * m).astype(int), m - 1)
    flat = np.ravel_multi_index(tuple(idx.T), (m,) * dim)

    ncell = m ** dim
    cellvol = np.zeros(ncell)
    np.add.at(cellvol, flat, vols)
    elem_mean = fld.levels[:, S].mean(axis=2)           # (levels, ne)
    num = np.zeros((fld.levels.shape[0], ncell))
    for l in range(num.shape[0]):
        np.add.at(num[l], flat, vols * elem_mean[l])
    return CellAverages(values=num / cellvol, m=m, dim=dim, grid=fld.grid)


def probe_points(p: int, dim: int) -> np.ndarray:
    """Midpoints of a p^dim lattice, never on cell or element boundaries."""
    axis = (np.arange(p) + 0.5) / p
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def l2_space_time(samples: np.ndarray, grid: TimeGrid) -> float:
    """Right-endpoint rectangle rule in time, midpoint lattice in space."""
    sq = np.mean(samples[1:] ** 2, axis=1)
    return float(np.sqrt(grid.step * np.sum(sq)))


def l2_space_time_exact(fld: TransientField, mesh) -> float:
    """Rectangle rule in time with the exact P1 mass integral in space."""
    total = 0.0
    for n in range(1, fld.levels.shape[0]):
        total += fld.grid.step * fem.mass_quadratic(mesh.vertices,
                                                    mesh.simplices,
                                                    fld.levels[n])
    return float(np.sqrt(total))


class PointLocator:
    """Element lookup on an unstructured simplicial mesh.

    Nearest element centroids are scanned in order until one contains the
    point up to a small barycentric slack; the least-violating candidate is
    kept as a fallback so evaluation is total on the closed domain.
    """

    def __init__(self, vertices, simplices):
        self.V = vertices
        self.S = simplices
        cent = vertices[simplices].mean(axis=1)
        self.tree = cKDTree(cent)
        v0 = vertices[simplices[:, 0]]
        edges = vertices[simplices[:, 1:]] - v0[:, None, :]
        self.inv = np.linalg.inv(np.transpose(edges, (0, 2, 1)))
        self.v0 = v0

    def locate(self, points):
        k = min(40, len(self.S))
        _, cand = self.tree.query(points, k=k)
        if cand.ndim == 1:
            cand = cand[:, None]
        npts = len(points)
        elems = np.empty(npts, dtype=np.int64)
        bary = np.empty((npts, self.S.shape[1]))
        for i, p in enumerate(points):
            best, best_viol = None, np.inf
            for e in cand[i]:
                lam = self.inv[e] @ (p - self.v0[e])
                b = np.concatenate(([1.0 - lam.sum()], lam))
                viol = -min(b.min(), 0.0)
                if viol < best_viol:
                    best, best_viol, best_b = e, viol, b
                if viol <= 1e-10:
                    break
            elems[i] = best
            bary[i] = best_b
        return elems, bary

    def evaluate(self, levels, points):
        elems, bary = self.locate(points)
        nodal = levels[:, self.S[elems]]                 # (L, P, npv)
        return np.einsum("lpk,pk->lp", nodal, bary)


# ---------------------------------------------------------------------------
# sweep drivers
# ---------------------------------------------------------------------------

@dataclass
class StudyReport:
    param_name: str
    params: list
    errors: list
    energy_bulk: list
    energy_surface: list
    runtime_s: list
    monotone_decrease: bool = field(init=False)

    def __post_init__(self):
        e = self.errors
        self.monotone_decrease = all(e[i] > e[i + 1] for i in range(len(e) - 1))

    def csv(self) -> str:
        lines = [f"{self.param_name}, error_L2, energy_bulk, energy_surface, runtime_s"]
        for row in zip(self.params, self.errors, self.energy_bulk,
                       self.energy_surface, self.runtime_s):
            lines.append(", ".join("%.17g" % v for v in row))
        lines.append("monotone_decrease: %s"
                     % ("true" if self.monotone_decrease else "false"))
        return "\n".join(lines) + "\n"


def convergence_study(regime, eps_list, *, cell_mesh, surf, coeffs, k, grid,
                      u0_bar=None, source=None, macro_mesh=None,
                      macro_field=None, strip=True, probe=48) -> StudyReport:
    """Sweep eps and compare micro solutions against the homogenized limit.

    For the k < 1 regimes the error column is the plain L2(Omega_T) norm of
    the micro solution (the limit is zero); otherwise it is the probe-grid
    L2(Omega_T) distance between the local average of the micro solution
    and the supplied macro field.
    """
    norm_only = regime == "klt1"
    if not norm_only and (macro_mesh is None or macro_field is None):
        raise ValueError("regime needs a macro reference field")

    if cell_mesh.dim == 3:
        probe = min(probe, 16)
    pts = probe_points(probe, cell_mesh.dim)
    if not norm_only:
        ref = PointLocator(macro_mesh.vertices, macro_mesh.simplices).evaluate(
            macro_field.levels, pts)

    eps_sorted = sorted(eps_list, reverse=True)
    errors, e_bulk, e_surf, runtimes = [], [], [], []
    for eps in eps_sorted:
        t0 = time.perf_counter()
        mmesh, _ = tile_micro_domain(cell_mesh, surf, eps,
                                     strip_boundary_inclusions=strip)
        fld = solve_micro(MicroRun(mesh=mmesh, coeffs=coeffs, k=k, grid=grid,
                                   u0_bar=u0_bar, source=source))
        if norm_only:
            err = l2_space_time_exact(fld, mmesh)
        else:
            avg = local_average(fld, mmesh)
            err = l2_space_time(avg.evaluate(pts) - ref, grid)
        errors.append(err)
        e_bulk.append(fld.diagnostics["energy_bulk"])
        e_surf.append(fld.diagnostics["energy_surface"])
        runtimes.append(time.perf_counter() - t0)
    return StudyReport("eps", eps_sorted, errors, e_bulk, e_surf, runtimes)


def concentration_study(eta_list, *, spec, coeffs, grid, eps, u0_bar,
                        probe=48) -> StudyReport:
    """Sweep the membrane thickness at fixed eps against the sharp solver.

    Boundary inclusions are kept on both sides: the concentration limit is
    a fixed-domain statement and at eps = 1/2 stripping would empty the
    geometry entirely.
    """
    cell_mesh, surf = geometry.build_unit_cell(spec)
    sharp_mesh, _ = tile_micro_domain(cell_mesh, surf, eps,
                                      strip_boundary_inclusions=False)
    sharp = solve_micro(MicroRun(mesh=sharp_mesh, coeffs=coeffs, k=1.0,
                                 grid=grid, u0_bar=u0_bar))
    pts = probe_points(probe, cell_mesh.dim)
    ref = PointLocator(sharp_mesh.vertices, sharp_mesh.simplices).evaluate(
        sharp.levels, pts)

    etas = sorted(eta_list, reverse=True)
    errors, e_bulk, e_surf, runtimes = [], [], [], []
    for eta in etas:
        t0 = time.perf_counter()
        band_cell, band_surf = geometry.build_membrane_cell(spec, eta)
        bmesh, _ = tile_micro_domain(band_cell, band_surf, eps,
                                     strip_boundary_inclusions=False)
        fld = solve_membrane(MembraneRun(mesh=bmesh, coeffs=coeffs, grid=grid,
                                         u0_bar=u0_bar))
        vals = PointLocator(bmesh.vertices, bmesh.simplices).evaluate(
            fld.levels, pts)
        errors.append(l2_space_time(vals - ref, grid))
        e_bulk.append(fld.diagnostics["energy_bulk"])
        e_surf.append(fld.diagnostics["energy_surface"])
        runtimes.append(time.perf_counter() - t0)
    return StudyReport("eta", etas, errors, e_bulk, e_surf, runtimes)
