"""Versioned ASCII artifact formats.

Every artifact starts with a one-token magic line (BHMESH 1, BHCELL 1,
BHTENS 1, BHSOL 1, BHRUN 1), carries provenance comments (config and
geometry hashes), and ends with a checksum line over the preceding bytes.
Floats are printed with %.17g so write/read round-trips are exact; re-runs
from the same config produce byte-identical bodies.
"""

import hashlib
import os

import numpy as np

from .errors import MissingArtifact

_F = "%.17g"


def _row(vals):
    return " ".join(_F % v for v in vals)


def _irow(vals):
    return " ".join(str(int(v)) for v in vals)


# ---------------------------------------------------------------------------
# artifact envelope
# ---------------------------------------------------------------------------

def write_artifact(path, magic, header, body_lines):
    lines = [magic]
    for key in sorted(header):
        lines.append(f"# {key} {header[key]}")
    lines.extend(body_lines)
    body = "\n".join(lines) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    with open(path, "w") as fh:
        fh.write(body)
        fh.write(f"checksum {digest}\n")


def read_artifact(path, magic):
    """Return (header dict, body lines) after integrity checks."""
    if not os.path.exists(path):
        raise MissingArtifact(f"missing artifact {path}")
    with open(path) as fh:
        raw = fh.read()
    lines = raw.splitlines()
    if not lines or lines[0] != magic:
        raise MissingArtifact(f"{path} is not a {magic.split()[0]} artifact")
    if not lines[-1].startswith("checksum "):
        raise MissingArtifact(f"{path} has no checksum trailer")
    recorded = lines[-1].split()[1]
    body = "\n".join(lines[:-1]) + "\n"
    if hashlib.sha256(body.encode()).hexdigest() != recorded:
        raise MissingArtifact(f"{path} failed its checksum (tampered or truncated)")
    header, content = {}, []
    for ln in lines[1:-1]:
        if ln.startswith("# "):
            key, _, val = ln[2:].partition(" ")
            header[key] = val
        else:
            content.append(ln)
    return header, content


def file_sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# ---------------------------------------------------------------------------
# BHMESH
# ---------------------------------------------------------------------------

def write_mesh(path, header, vertices, simplices, phase, surf=None, pairs=None):
    nv, dim = vertices.shape
    body = [f"dim {dim}", f"vertices {nv}"]
    body += [_row(v) for v in vertices]
    body.append(f"elements {len(simplices)}")
    body += [_irow(list(s) + [p]) for s, p in zip(simplices, phase)]
    if surf is not None:
        body.append(f"facets {len(surf.facets)}")
        body += [_irow(list(f) + [c]) + " " + _row(nu)
                 for f, c, nu in zip(surf.facets, surf.component, surf.normals)]
    else:
        body.append("facets 0")
    if pairs is not None and len(pairs):
        body.append(f"pairs {len(pairs)}")
        body += [_irow(p) for p in pairs]
    else:
        body.append("pairs 0")
    write_artifact(path, "BHMESH 1", header, body)


def read_mesh(path):
    header, body = read_artifact(path, "BHMESH 1")
    it = iter(body)
    dim = int(next(it).split()[1])
    nv = int(next(it).split()[1])
    vertices = np.array([[float(t) for t in next(it).split()] for _ in range(nv)])
    ne = int(next(it).split()[1])
    rows = [[int(t) for t in next(it).split()] for _ in range(ne)]
    simplices = np.array([r[:-1] for r in rows], dtype=np.int64)
    phase = np.array([r[-1] for r in rows], dtype=np.int64)
    nf = int(next(it).split()[1])
    facets, comp, normals = [], [], []
    for _ in range(nf):
        toks = next(it).split()
        facets.append([int(t) for t in toks[:dim]])
        comp.append(int(toks[dim]))
        normals.append([float(t) for t in toks[dim + 1:]])
    npairs = int(next(it).split()[1])
    pairs = np.array([[int(t) for t in next(it).split()] for _ in range(npairs)],
                     dtype=np.int64).reshape(npairs, 3)
    return header, {
        "vertices": vertices, "simplices": simplices, "phase": phase,
        "facets": np.array(facets, dtype=np.int64).reshape(nf, dim),
        "component": np.array(comp, dtype=np.int64),
        "normals": np.array(normals).reshape(nf, dim),
        "pairs": pairs,
    }


# ---------------------------------------------------------------------------
# BHCELL
# ---------------------------------------------------------------------------

def write_cell_archive(path, header, grid, fields):
    """fields: list of (name, time_index, values); index -1 for stationary."""
    body = [f"grid {_F % grid.t_end} {_F % grid.step}",
            f"fields {len(fields)}"]
    for name, idx, vals in fields:
        body.append(f"field {name} {idx} {len(vals)}")
        body.append(_row(vals))
    write_artifact(path, "BHCELL 1", header, body)


def read_cell_archive(path):
    header, body = read_artifact(path, "BHCELL 1")
    it = iter(body)
    _, t_end, dt = next(it).split()
    nfields = int(next(it).split()[1])
    fields = []
    for _ in range(nfields):
        _, name, idx, n = next(it).split()
        vals = np.array([float(t) for t in next(it).split()])
        if len(vals) != int(n):
            raise MissingArtifact(f"{path}: field {name} length mismatch")
        fields.append((name, int(idx), vals))
    return header, (float(t_end), float(dt)), fields


# ---------------------------------------------------------------------------
# BHTENS
# ---------------------------------------------------------------------------

def _mat_line(key, M):
    return f"{key} " + _row(np.asarray(M).ravel())


def _parse_mat(tokens, dim):
    return np.array([float(t) for t in tokens]).reshape(dim, dim)


def write_tensors(path, header, tens, kernel_grid):
    N = tens.A0.shape[0]
    A_inst = tens.lambda0 * np.eye(N) + tens.A0
    body = [f"dim {N}", f"lambda0 {_F % tens.lambda0}",
            _mat_line("A0", tens.A0),
            _mat_line("A0_flux", tens.A0_flux_form),
            f"A0_gap {_F % tens.discrepancies.get('A0_forms', 0.0)}",
            _mat_line("C0", tens.C0),
            _mat_line("C0_mixed", tens.C0_mixed_form),
            f"C0_gap {_F % tens.discrepancies.get('C0', 0.0)}",
            "A_inst_eig " + _row(np.linalg.eigvalsh((A_inst + A_inst.T) / 2)),
            "C0_eig " + _row(np.linalg.eigvalsh((tens.C0 + tens.C0.T) / 2))]
    if tens.A_hom_klt1 is not None:
        body.append(_mat_line("A_hom_klt1", tens.A_hom_klt1))
    if tens.A_hom_kgt1 is not None:
        body.append(_mat_line("A_hom_kgt1", tens.A_hom_kgt1))
    body.append(f"kernel {_F % kernel_grid.t_end} {_F % kernel_grid.step}")

    names = [f"B{a + 1}{b + 1}" for a in range(N) for b in range(N)]
    body.append("B0_csv")
    body.append("t, " + ", ".join(names) + ", discrepancy")
    scale = max(float(np.abs(tens.B0).max()), 1e-300)
    for l, t in enumerate(kernel_grid.times):
        gap = float(np.abs(tens.B0[l] - tens.B0_flux_form[l]).max()) / scale
        body.append(", ".join([_F % t] + [_F % v for v in tens.B0[l].ravel()]
                              + [_F % gap]))
    body.append("end_csv")
    body.append("Phi_csv")
    body.append("t, " + ", ".join(n.replace("B", "P") for n in names))
    for l, t in enumerate(kernel_grid.times):
        body.append(", ".join([_F % t]
                              + [_F % v for v in tens.F_coeffs[l].ravel()]))
    body.append("end_csv")
    write_artifact(path, "BHTENS 1", header, body)


def read_tensors(path):
    header, body = read_artifact(path, "BHTENS 1")
    it = iter(body)
    out = {}
    dim = int(next(it).split()[1])
    out["dim"] = dim
    for ln in it:
        toks = ln.split()
        key = toks[0]
        if key in ("lambda0", "A0_gap", "C0_gap"):
            out[key] = float(toks[1])
        elif key in ("A0", "A0_flux", "C0", "C0_mixed",
                     "A_hom_klt1", "A_hom_kgt1"):
            out[key] = _parse_mat(toks[1:], dim)
        elif key in ("A_inst_eig", "C0_eig"):
            out[key] = np.array([float(t) for t in toks[1:]])
        elif key == "kernel":
            out["kernel"] = (float(toks[1]), float(toks[2]))
        elif key in ("B0_csv", "Phi_csv"):
            next(it)  # column header
            rows = []
            for sub in it:
                if sub == "end_csv":
                    break
                rows.append([float(t) for t in sub.split(", ")])
            rows = np.array(rows)
            mats = rows[:, 1:1 + dim * dim].reshape(-1, dim, dim)
            out["kernel_times" if key == "B0_csv" else "phi_times"] = rows[:, 0]
            if key == "B0_csv":
                out["B0"] = mats
                out["B0_row_gap"] = rows[:, -1]
            else:
                out["Phi"] = mats
    return header, out


# ---------------------------------------------------------------------------
# BHSOL
# ---------------------------------------------------------------------------

def write_solution(path, header, kind, grid, levels):
    body = [f"kind {kind}",
            f"grid {_F % grid.t_end} {_F % grid.step}",
            f"nv {levels.shape[1]}"]
    for n, t in enumerate(grid.times):
        body.append(f"level {n} {_F % t}")
        body.append(_row(levels[n]))
    write_artifact(path, "BHSOL 1", header, body)


def read_solution(path):
    header, body = read_artifact(path, "BHSOL 1")
    it = iter(body)
    kind = next(it).split()[1]
    _, t_end, dt = next(it).split()
    nv = int(next(it).split()[1])
    levels, times = [], []
    for ln in it:
        toks = ln.split()
        if toks[0] != "level":
            raise MissingArtifact(f"{path}: malformed level block")
        times.append(float(toks[2]))
        vals = np.array([float(t) for t in next(it).split()])
        if len(vals) != nv:
            raise MissingArtifact(f"{path}: level length mismatch")
        levels.append(vals)
    return header, kind, (float(t_end), float(dt)), np.array(times), np.array(levels)


# ---------------------------------------------------------------------------
# BHRUN manifest (the one place timestamps are allowed)
# ---------------------------------------------------------------------------

def write_manifest(path, command, config_hash, tool_version, started_iso,
                   wall_time_s, inputs, outputs):
    body = [f"command {command}",
            f"config {config_hash}",
            f"tool_version {tool_version}",
            f"started {started_iso}",
            f"wall_time_s {_F % wall_time_s}"]
    for p in inputs:
        body.append(f"input {os.path.basename(p)} {file_sha256(p)}")
    for p in outputs:
        body.append(f"output {os.path.basename(p)} {file_sha256(p)}")
    write_artifact(path, "BHRUN 1", {}, body)


# ---------------------------------------------------------------------------
# legacy VTK export
# ---------------------------------------------------------------------------

def write_vtk(path, vertices, simplices, values, name="u",
              cell_values=None, cell_name="phase"):
    nv, dim = vertices.shape
    npv = simplices.shape[1]
    cell_type = {3: 5, 4: 10}[npv]
    lines = ["# vtk DataFile Version 3.0", "bh snapshot", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
    pts = np.zeros((nv, 3))
    pts[:, :dim] = vertices
    lines += [_row(p) for p in pts]
    lines.append(f"CELLS {len(simplices)} {len(simplices) * (npv + 1)}")
    lines += [_irow([npv] + list(s)) for s in simplices]
    lines.append(f"CELL_TYPES {len(simplices)}")
    lines += [str(cell_type)] * len(simplices)
    lines.append(f"POINT_DATA {nv}")
    lines.append(f"SCALARS {name} double 1")
    lines.append("LOOKUP_TABLE default")
    lines += [_F % v for v in values]
    if cell_values is not None:
        lines.append(f"CELL_DATA {len(simplices)}")
        lines.append(f"SCALARS {cell_name} int 1")
        lines.append("LOOKUP_TABLE default")
        lines += [str(int(v)) for v in cell_values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
