"""Shared fixtures: one solved bundle per geometry, built once per session.

The bundles use short kernel horizons so the unit tests stay fast; the
acceptance module builds its own bundles at the parameters the criteria
prescribe.
"""
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bh import cell, geometry, tensors
from bh.timegrid import TimeGrid

settings.register_profile(
    "ci", max_examples=25, deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@dataclass
class Bundle:
    spec: geometry.GeometrySpec
    mesh: geometry.CellMesh
    surf: geometry.SurfaceMesh
    coeffs: cell.CellCoefficients
    grid: TimeGrid
    system: cell.CellSystem
    funcs: cell.CellFunctionSet
    tens: tensors.EffectiveTensors


def _build(kind, params, h, grid, topology):
    spec = geometry.GeometrySpec(kind, params, h=h)
    mesh, surf = geometry.build_unit_cell(spec)
    coeffs = cell.CellCoefficients(1.0, 3.0, 1.0)
    funcs = cell.solve_cell_functions(mesh, surf, coeffs, grid,
                                      with_chi0_tilde=True)
    system = cell.CellSystem(mesh, surf, coeffs)
    tens = tensors.compute_all(system, funcs, topology)
    return Bundle(spec, mesh, surf, coeffs, grid, system, funcs, tens)


@pytest.fixture(scope="session")
def disk():
    return _build("Disk2D", {"r0": 0.25}, 0.04, TimeGrid(0.2, 0.02), "cd")


@pytest.fixture(scope="session")
def layered():
    return _build("Layered2D", {"a": 0.25, "b": 0.75}, 0.05,
                  TimeGrid(0.2, 0.02), "cc")


@pytest.fixture(scope="session")
def tube():
    return _build("TubeLattice3D", {"rho": 0.25}, 1.0 / 6.0,
                  TimeGrid(0.1, 0.05), "cc")


def sin_product(pts):
    out = np.ones(len(pts))
    for i in range(pts.shape[1]):
        out *= np.sin(np.pi * pts[:, i])
    return out
