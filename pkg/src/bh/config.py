"""Run configuration: flat INI sections parsed into one frozen dataclass.

Every output file records the sha256 hash of the canonicalized config so
downstream commands can refuse artifacts produced under different settings.
The only environment override honored anywhere is BH_OUTPUT_DIR.
"""

import configparser
import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .cell import CellCoefficients
from .errors import ConfigInvalid, InvalidGeometry, NonpositiveCoefficient
from .geometry import GeometrySpec
from .timegrid import TimeGrid

PRESETS = ("zero", "sin-product", "gaussian-bump")

_GEOMETRY_PARAMS = {
    "Disk2D": ("r0",),
    "Layered2D": ("a", "b"),
    "TubeLattice3D": ("rho",),
}


def preset_function(name: str, dim: int):
    """Analytic nodal data by name; every preset vanishes on the boundary."""
    if name == "zero":
        return lambda pts: np.zeros(len(pts))
    if name == "sin-product":
        def f(pts):
            out = np.ones(len(pts))
            for i in range(dim):
                out *= np.sin(np.pi * pts[:, i])
            return out
        return f
    if name == "gaussian-bump":
        sigma = 0.15

        def f(pts):
            r2 = np.sum((pts[:, :dim] - 0.5) ** 2, axis=1)
            out = np.exp(-r2 / (2.0 * sigma ** 2))
            for i in range(dim):
                out *= np.sin(np.pi * pts[:, i])
            return out
        return f
    raise ConfigInvalid(f"unknown preset {name!r}, choose from {PRESETS}")


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometrySpec
    coeffs: CellCoefficients
    k: float
    kernel_grid: TimeGrid
    macro_grid: TimeGrid
    macro_n: int
    u0_name: str
    f_name: str
    eps_list: tuple
    eta_list: tuple
    out_dir: str
    config_hash: str
    geometry_hash: str

    @property
    def dim(self) -> int:
        return 3 if self.geometry.kind == "TubeLattice3D" else 2

    @property
    def topology(self) -> str:
        return self.geometry.topology

    @property
    def regime(self) -> str:
        if self.k == 1.0:
            tail = "connected" if self.topology == "cc" else "disconnected"
            return f"k1_connected_{tail}"
        return "klt1" if self.k < 1.0 else "kgt1"

    def u0_function(self):
        if self.u0_name == "zero":
            return None
        return preset_function(self.u0_name, self.dim)

    def source_function(self):
        if self.f_name == "zero":
            return None
        g = preset_function(self.f_name, self.dim)
        return lambda pts, t: g(pts)


def _canonical_text(cp: configparser.ConfigParser) -> str:
    lines = []
    for section in sorted(cp.sections()):
        lines.append(f"[{section}]")
        for key in sorted(cp[section]):
            lines.append(f"{key}={cp[section][key].strip()}")
    return "\n".join(lines) + "\n"


def _hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _get_float(cp, section, key, default=None, positive=False):
    try:
        raw = cp.get(section, key, fallback=None)
        if raw is None:
            if default is None:
                raise ConfigInvalid(f"missing [{section}] {key}")
            return default
        val = float(raw)
    except ValueError as exc:
        raise ConfigInvalid(f"[{section}] {key} is not a number") from exc
    if positive and val <= 0.0:
        raise ConfigInvalid(f"[{section}] {key} must be positive, got {val}")
    return val


def _get_list(cp, section, key, default):
    raw = cp.get(section, key, fallback=None)
    if raw is None:
        return default
    try:
        vals = tuple(float(tok) for tok in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigInvalid(f"[{section}] {key} is not a number list") from exc
    if not vals or any(v <= 0.0 for v in vals):
        raise ConfigInvalid(f"[{section}] {key} must list positive values")
    return vals


def load_config(path: str) -> RunConfig:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigInvalid(f"config file {path!r} not found or unreadable")

    kind = cp.get("geometry", "kind", fallback="Disk2D").strip()
    if kind not in _GEOMETRY_PARAMS:
        raise ConfigInvalid(f"unknown geometry kind {kind!r}")
    params = {p: _get_float(cp, "geometry", p, positive=True)
              for p in _GEOMETRY_PARAMS[kind]}
    h = _get_float(cp, "geometry", "h", positive=True)
    spec = GeometrySpec(kind, params, h)
    try:
        spec.validate()
    except InvalidGeometry as exc:
        raise ConfigInvalid(f"geometry: {exc}") from exc

    try:
        coeffs = CellCoefficients(
            _get_float(cp, "coefficients", "lambda_int", 1.0),
            _get_float(cp, "coefficients", "lambda_out", 1.0),
            _get_float(cp, "coefficients", "alpha", 1.0))
    except NonpositiveCoefficient as exc:
        raise ConfigInvalid(str(exc)) from exc
    k = _get_float(cp, "coefficients", "k", 1.0)

    kernel_grid = TimeGrid(_get_float(cp, "kernel", "t_end", 2.0, positive=True),
                           _get_float(cp, "kernel", "dt", 0.01, positive=True))
    macro_grid = TimeGrid(_get_float(cp, "macro", "t_end", 1.0, positive=True),
                          _get_float(cp, "macro", "dt", 0.05, positive=True))
    macro_n = int(_get_float(cp, "macro", "n", 32, positive=True))
    if macro_grid.t_end > kernel_grid.t_end + 1e-12:
        raise ConfigInvalid("macro horizon exceeds kernel horizon")

    u0_name = cp.get("data", "u0", fallback="zero").strip()
    f_name = cp.get("data", "f", fallback="zero").strip()
    for name in (u0_name, f_name):
        if name not in PRESETS:
            raise ConfigInvalid(f"unknown preset {name!r}, choose from {PRESETS}")

    eps_list = _get_list(cp, "study", "eps_list", (0.5, 0.25, 0.125))
    for eps in eps_list:
        if abs(round(1.0 / eps) - 1.0 / eps) > 1e-9:
            raise ConfigInvalid(f"eps={eps} is not a reciprocal integer")
    eta_list = _get_list(cp, "study", "eta_list", (0.2, 0.1, 0.05))

    out_dir = cp.get("output", "dir", fallback="out").strip()
    out_dir = os.environ.get("BH_OUTPUT_DIR", out_dir)

    text = _canonical_text(cp)
    geom_text = "\n".join(
        f"{key}={cp['geometry'][key].strip()}" for key in sorted(cp["geometry"]))
    return RunConfig(geometry=spec, coeffs=coeffs, k=k,
                     kernel_grid=kernel_grid, macro_grid=macro_grid,
                     macro_n=macro_n, u0_name=u0_name, f_name=f_name,
                     eps_list=eps_list, eta_list=eta_list, out_dir=out_dir,
                     config_hash=_hash(text), geometry_hash=_hash(geom_text))
