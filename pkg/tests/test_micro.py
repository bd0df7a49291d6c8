"""Micro and membrane solvers, local averaging, study drivers.

The sharpest oracle is operator equivalence: at eps = 1 with periodic
boundary handling the micro march IS the cell relaxation, and the two code
paths must agree bitwise.  Everything else is structural: exact Dirichlet
rows, quasi-static collapse without interfaces, P1-exact cell averages.
"""
import numpy as np
import pytest

from bh import cell, geometry, micro
from bh.errors import WrongGeometryClass
from bh.geometry import PHASE_MEMBRANE, build_membrane_cell, tile_micro_domain
from bh.timegrid import TimeGrid

from conftest import sin_product


@pytest.fixture(scope="module")
def disk_tiled(disk):
    mesh, surf = tile_micro_domain(disk.mesh, disk.surf, 0.5,
                                   strip_boundary_inclusions=False)
    return mesh, surf


@pytest.fixture(scope="module")
def disk_field(disk, disk_tiled):
    mesh, _ = disk_tiled
    run = micro.MicroRun(mesh=mesh, coeffs=disk.coeffs, k=1.0,
                         grid=TimeGrid(0.2, 0.02), u0_bar=sin_product)
    return micro.solve_micro(run)


# ---------------------------------------------------------------------------
# micro marches
# ---------------------------------------------------------------------------

def test_micro_periodic_mode_equals_cell_relaxation(disk):
    """eps = 1 + periodic pairs: same operator as the cell evolution."""
    sys = disk.system
    grid = TimeGrid(0.1, 0.02)
    ref, _ = cell.evolve_surface_coupled(sys, disk.funcs.v[0], grid)

    mmesh = geometry.MicroMesh(vertices=disk.mesh.vertices,
                               simplices=disk.mesh.simplices,
                               phase=disk.mesh.phase, eps=1.0,
                               boundary_vertices=np.zeros(0, dtype=np.int64))
    init = disk.funcs.v[0]
    run = micro.MicroRun(mesh=mmesh, coeffs=disk.coeffs, k=1.0, grid=grid,
                         u0_bar=lambda pts: init[sys.vdof],
                         periodic_pairs=disk.mesh.periodic_pairs)
    fld = micro.solve_micro(run)
    assert np.abs(fld.levels - ref[:, sys.vdof]).max() == 0.0


def test_micro_dirichlet_rows_exact(disk_field, disk_tiled):
    mesh, _ = disk_tiled
    assert np.all(disk_field.levels[:, mesh.boundary_vertices] == 0.0)


def test_micro_surface_energy_dissipates(disk_field):
    se = disk_field.diagnostics["surface_energy"]
    assert se[0] > 0.0
    assert cell.energy_nonincreasing(se)
    assert se[-1] < se[0]


def test_micro_rejects_membrane_mesh(disk):
    bc, bs = build_membrane_cell(disk.spec, 0.2)
    bm, _ = tile_micro_domain(bc, bs, 0.5, strip_boundary_inclusions=False)
    run = micro.MicroRun(mesh=bm, coeffs=disk.coeffs, k=1.0,
                         grid=TimeGrid(0.1, 0.05), u0_bar=sin_product)
    with pytest.raises(WrongGeometryClass):
        micro.solve_micro(run)


def test_interface_free_mesh_is_quasi_static(disk):
    # stripping at eps = 1/2 removes every inclusion; the initial datum
    # enters only through its interface trace, so the whole march is the
    # trivial steady state of the source-free conduction problem
    mesh, _ = tile_micro_domain(disk.mesh, disk.surf, 0.5,
                                strip_boundary_inclusions=True)
    run = micro.MicroRun(mesh=mesh, coeffs=disk.coeffs, k=0.0,
                         grid=TimeGrid(0.1, 0.05), u0_bar=sin_product)
    fld = micro.solve_micro(run)
    assert np.abs(fld.levels).max() == 0.0
    assert fld.diagnostics["energy_surface"] == 0.0


def test_micro_scaling_exponent_enters(disk_tiled, disk):
    # larger k weakens the surface term at eps < 1, so trajectories differ
    mesh, _ = disk_tiled
    grid = TimeGrid(0.1, 0.05)
    f0 = micro.solve_micro(micro.MicroRun(mesh=mesh, coeffs=disk.coeffs,
                                          k=0.0, grid=grid, u0_bar=sin_product))
    f2 = micro.solve_micro(micro.MicroRun(mesh=mesh, coeffs=disk.coeffs,
                                          k=2.0, grid=grid, u0_bar=sin_product))
    assert np.abs(f0.levels[-1] - f2.levels[-1]).max() > 1e-6


# ---------------------------------------------------------------------------
# membrane marches
# ---------------------------------------------------------------------------

def test_membrane_march_dissipates(disk):
    bc, bs = build_membrane_cell(disk.spec, 0.2)
    bm, _ = tile_micro_domain(bc, bs, 0.5, strip_boundary_inclusions=False)
    fld = micro.solve_membrane(micro.MembraneRun(mesh=bm, coeffs=disk.coeffs,
                                                 grid=TimeGrid(0.2, 0.02),
                                                 u0_bar=sin_product))
    me = fld.diagnostics["membrane_energy"]
    assert me[0] > 0.0
    assert cell.energy_nonincreasing(me)
    assert np.all(fld.levels[:, bm.boundary_vertices] == 0.0)


def test_membrane_initial_state_pins_band(disk):
    bc, bs = build_membrane_cell(disk.spec, 0.2)
    bm, _ = tile_micro_domain(bc, bs, 0.5, strip_boundary_inclusions=False)
    fld = micro.solve_membrane(micro.MembraneRun(mesh=bm, coeffs=disk.coeffs,
                                                 grid=TimeGrid(0.1, 0.05),
                                                 u0_bar=sin_product))
    band = np.unique(bm.simplices[bm.phase == PHASE_MEMBRANE])
    ref = sin_product(bm.vertices[band])
    assert np.abs(fld.levels[0][band] - ref).max() <= 1e-12


# ---------------------------------------------------------------------------
# local averages and norms
# ---------------------------------------------------------------------------

def test_local_average_exact_on_constants(disk_field, disk_tiled):
    mesh, _ = disk_tiled
    ones = micro.TransientField(levels=np.ones((2, len(mesh.vertices))),
                                grid=TimeGrid(0.1, 0.05))
    avg = micro.local_average(ones, mesh)
    assert np.abs(avg.values - 1.0).max() <= 1e-12


def test_local_average_exact_on_linears(disk_tiled):
    # the average of an affine field over a cell is its centre value
    mesh, _ = disk_tiled
    u = 0.75 * mesh.vertices[:, 0] - 0.2 * mesh.vertices[:, 1]
    fld = micro.TransientField(levels=u[None, :], grid=TimeGrid(0.1, 0.1))
    avg = micro.local_average(fld, mesh)
    centers = (np.stack(np.meshgrid(*([np.arange(2)] * 2), indexing="ij"),
                        axis=-1).reshape(-1, 2) + 0.5) / 2.0
    ref = 0.75 * centers[:, 0] - 0.2 * centers[:, 1]
    assert np.abs(avg.values[0] - ref).max() <= 1e-12


def test_local_average_is_contraction(disk_field, disk_tiled):
    mesh, _ = disk_tiled
    avg = micro.local_average(disk_field, mesh)
    assert np.abs(avg.values).max() <= np.abs(disk_field.levels).max() + 1e-14


def test_cell_averages_evaluate_lookup():
    vals = np.arange(8.0).reshape(2, 4)
    ca = micro.CellAverages(values=vals, m=2, dim=2, grid=TimeGrid(1.0, 1.0))
    pts = np.array([[0.1, 0.1], [0.1, 0.9], [0.9, 0.1], [0.9, 0.9]])
    got = ca.evaluate(pts)
    assert np.array_equal(got[0], [0.0, 1.0, 2.0, 3.0])
    assert np.array_equal(got[1], [4.0, 5.0, 6.0, 7.0])


def test_probe_points_inside_open_cell():
    pts = micro.probe_points(5, 3)
    assert pts.shape == (125, 3)
    assert pts.min() > 0.0 and pts.max() < 1.0


def test_l2_space_time_closed_forms():
    grid = TimeGrid(1.0, 0.25)
    zeros = np.zeros((grid.n_steps + 1, 9))
    assert micro.l2_space_time(zeros, grid) == 0.0
    const = 3.0 * np.ones((grid.n_steps + 1, 9))
    # right-endpoint rectangle rule: sqrt(sum dt * 9) = 3 sqrt(T)
    assert abs(micro.l2_space_time(const, grid) - 3.0) <= 1e-12


def test_l2_exact_agrees_with_probe_rule(disk_field, disk_tiled):
    mesh, _ = disk_tiled
    exact = micro.l2_space_time_exact(disk_field, mesh)
    pts = micro.probe_points(64, 2)
    sampled = micro.PointLocator(mesh.vertices, mesh.simplices).evaluate(
        disk_field.levels, pts)
    approx = micro.l2_space_time(sampled, disk_field.grid)
    assert abs(exact - approx) <= 0.02 * exact


def test_point_locator_reproduces_linear_fields(disk_tiled):
    mesh, _ = disk_tiled
    u = 1.0 + 0.4 * mesh.vertices[:, 0] - 1.3 * mesh.vertices[:, 1]
    rng = np.random.default_rng(12)
    pts = rng.uniform(0.01, 0.99, size=(200, 2))
    got = micro.PointLocator(mesh.vertices, mesh.simplices).evaluate(
        u[None, :], pts)[0]
    ref = 1.0 + 0.4 * pts[:, 0] - 1.3 * pts[:, 1]
    assert np.abs(got - ref).max() <= 1e-10


# ---------------------------------------------------------------------------
# study drivers
# ---------------------------------------------------------------------------

def test_study_report_monotone_flag_and_csv():
    rep = micro.StudyReport("eps", [0.5, 0.25], [2.0, 1.0], [0.1, 0.1],
                            [0.0, 0.0], [1.0, 1.0])
    assert rep.monotone_decrease
    text = rep.csv()
    assert text.splitlines()[0].startswith("eps, error_L2")
    assert text.rstrip().endswith("monotone_decrease: true")

    rep2 = micro.StudyReport("eta", [0.2, 0.1], [1.0, 1.5], [0.1, 0.1],
                             [0.0, 0.0], [1.0, 1.0])
    assert not rep2.monotone_decrease
    assert rep2.csv().rstrip().endswith("monotone_decrease: false")


def test_convergence_study_requires_reference(disk):
    with pytest.raises(ValueError):
        micro.convergence_study("k1_connected_disconnected", [0.5],
                                cell_mesh=disk.mesh, surf=disk.surf,
                                coeffs=disk.coeffs, k=1.0,
                                grid=TimeGrid(0.1, 0.05))
