"""Legacy VTK snapshots and CSV time series.

Files are written to a temporary sibling and renamed into place.
"""

import logging
import os
import tempfile
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from .diagnostics import RunReport
from .mesh import Mesh
from .spaces import Field

logger = logging.getLogger(__name__)

TIMESERIES_HEADER = "t,energy,max_vorticity,div_weak,div_pointwise,stab_seminorm,flag"
VTK_TRIANGLE = 5


def _num(x: float) -> str:
    return f"{float(x):.17g}"


def atomic_write(path: Union[str, Path], text: str) -> Path:
    """Write through a temporary sibling renamed into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def vtk_text(mesh: Mesh, fields: Optional[Mapping[str, Field]] = None,
             node_of_vertex: Optional[np.ndarray] = None, title: str = "smagfem output") -> str:
    """Legacy ASCII unstructured grid.

    Velocity fields become point vectors, element and pressure fields become
    cell scalars (a macro pressure is repeated over its sub-triangles).
    """
    fields = fields or {}
    nv, nt = mesh.n_vertices, mesh.n_triangles
    vertex_node = np.arange(nv) if node_of_vertex is None else np.asarray(node_of_vertex)
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {nv} double"]
    out += [f"{_num(x)} {_num(y)} 0" for x, y in mesh.vertices]
    out.append(f"CELLS {nt} {4 * nt}")
    out += [f"3 {i} {j} {k}" for i, j, k in mesh.triangles]
    out.append(f"CELL_TYPES {nt}")
    out += [str(VTK_TRIANGLE)] * nt

    point_fields = {name: f for name, f in fields.items() if f.space == "velocity"}
    cell_fields = {name: f for name, f in fields.items() if f.space != "velocity"}
    if point_fields:
        out.append(f"POINT_DATA {nv}")
        for name, f in point_fields.items():
            values = f.nodal[vertex_node]
            out.append(f"VECTORS {name} double")
            out += [f"{_num(a)} {_num(b)} 0" for a, b in values]
    if cell_fields:
        out.append(f"CELL_DATA {nt}")
        for name, f in cell_fields.items():
            values = f.coeffs[mesh.macro_parent] if f.space == "pressure" else f.coeffs
            if len(values) != nt:
                raise ValueError(f"cell field {name} has {len(values)} values for {nt} triangles")
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out += [_num(v) for v in values]
    return "\n".join(out) + "\n"


def write_vtk(path: Union[str, Path], mesh: Mesh, fields: Optional[Mapping[str, Field]] = None,
              node_of_vertex: Optional[np.ndarray] = None) -> Path:
    path = atomic_write(path, vtk_text(mesh, fields, node_of_vertex))
    logger.debug("wrote %s", path)
    return path


def timeseries_text(report: RunReport) -> str:
    lines = [TIMESERIES_HEADER]
    for r in report.records:
        lines.append(",".join([_num(r.t), _num(r.energy), _num(r.max_vorticity), _num(r.div_weak),
                               _num(r.div_pointwise), _num(r.stab_seminorm), r.flag.value]))
    return "\n".join(lines) + "\n"


def write_timeseries(path: Union[str, Path], report: RunReport) -> Path:
    """CSV with one row per output record, 17 significant digits."""
    path = atomic_write(path, timeseries_text(report))
    logger.debug("wrote %s (%d rows)", path, len(report.records))
    return path
