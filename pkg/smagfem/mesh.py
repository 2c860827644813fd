"""Triangulations with macro structure, face connectivity and periodicity."""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import httpx
import numpy as np
from scipy.spatial import Delaunay

from .errors import MeshError

logger = logging.getLogger(__name__)

BOUNDARY = -1

# Relative tolerance for matching coordinates across periodic sides.
PERIODIC_MATCH_TOL = 1e-9


class BoundaryTag(str, Enum):
    WALL = "wall"
    INFLOW = "inflow"
    OUTFLOW = "outflow"
    CYLINDER = "cylinder"
    PERIODIC_X = "periodic_x"
    PERIODIC_Y = "periodic_y"

    @classmethod
    def parse(cls, label: str) -> "BoundaryTag":
        try:
            return cls(label.strip().lower())
        except ValueError:
            raise ValueError(f"Unknown boundary tag: {label}") from None


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation.

    ``faces[f]`` holds the vertex pair of face ``f`` oriented counter-clockwise
    with respect to ``face_left[f]``; ``face_right[f]`` is ``BOUNDARY`` on the
    boundary. ``periodic_master[v]`` is ``v`` unless ``v`` is a periodic slave.
    ``periodic_faces`` rows are ``(slave_face, master_face)``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    macro_parent: np.ndarray
    faces: np.ndarray
    face_left: np.ndarray
    face_right: np.ndarray
    boundary_tags: Mapping[int, BoundaryTag]
    periodic_master: np.ndarray
    periodic_faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    macro_kind: str = "none"

    @classmethod
    def from_arrays(cls, vertices, triangles, edge_tags: Mapping[tuple, BoundaryTag],
                    macro_parent=None, macro_kind: str = "none") -> "Mesh":
        """Build connectivity from raw arrays and tags keyed by sorted vertex pairs."""
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        triangles = np.asarray(triangles, dtype=int).reshape(-1, 3)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshError("triangle references a vertex index out of range")
        finite = np.isfinite(vertices).all(axis=1)
        if not finite.all():
            raise MeshError(f"vertex {int(np.flatnonzero(~finite)[0])} has a non-finite coordinate")
        areas = _signed_areas(vertices, triangles)
        bad = np.flatnonzero(~(areas > 0.0))
        if bad.size:
            raise MeshError(f"triangle {bad[0]} is inverted or degenerate (signed area {areas[bad[0]]:.3e})",
                            triangle=int(bad[0]))
        faces, left, right, _ = _face_connectivity(triangles)
        tags: dict[int, BoundaryTag] = {}
        for f in np.flatnonzero(right == BOUNDARY):
            key = _edge_key(*faces[f])
            if key not in edge_tags:
                raise MeshError(f"boundary face {tuple(int(v) for v in faces[f])} has no boundary tag")
            tags[int(f)] = BoundaryTag(edge_tags[key])
        if macro_parent is None:
            macro_parent = np.arange(len(triangles))
        return cls(vertices=vertices, triangles=triangles,
                   macro_parent=np.asarray(macro_parent, dtype=int),
                   faces=faces, face_left=left, face_right=right, boundary_tags=tags,
                   periodic_master=np.arange(len(vertices)), macro_kind=macro_kind)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_macro(self) -> int:
        return int(self.macro_parent.max()) + 1 if self.n_triangles else 0

    @property
    def areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.triangles)

    @property
    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        edges = p[:, [1, 2, 0]] - p
        return np.sqrt((edges ** 2).sum(axis=2)).max(axis=1)

    @property
    def h(self) -> float:
        """Global mesh size: the largest triangle diameter."""
        return float(self.diameters.max())

    @property
    def quasi_uniformity(self) -> float:
        d = self.diameters
        return float(d.max() / d.min())

    @property
    def h_per_face(self) -> np.ndarray:
        """Face lengths."""
        d = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
        return np.sqrt((d ** 2).sum(axis=1))

    @property
    def face_normals(self) -> np.ndarray:
        """Unit normals pointing out of the left triangle."""
        d = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.linalg.norm(n, axis=1)[:, None]

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_right == BOUNDARY)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_right != BOUNDARY)

    @property
    def bounding_box(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])

    @property
    def macro_areas(self) -> np.ndarray:
        return np.bincount(self.macro_parent, weights=self.areas, minlength=self.n_macro)

    def faces_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        return np.array(sorted(f for f, t in self.boundary_tags.items() if t == tag), dtype=int)

    @property
    def slave_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.periodic_master != np.arange(self.n_vertices))

    def summary(self) -> dict:
        return {
            "vertices": self.n_vertices,
            "triangles": self.n_triangles,
            "macro_cells": self.n_macro,
            "macro_kind": self.macro_kind,
            "faces": len(self.faces),
            "boundary_faces": len(self.boundary_faces),
            "periodic_vertex_pairs": len(self.slave_vertices),
            "h": self.h,
            "quasi_uniformity": self.quasi_uniformity,
        }


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (int(a), int(b)) if a < b else (int(b), int(a))


def _signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _face_connectivity(triangles: np.ndarray):
    """Unique faces with left/right owners and the triangle-to-face table."""
    nt = len(triangles)
    edges = triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
    owner = np.repeat(np.arange(nt), 3)
    keys = np.sort(edges, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if counts.size and counts.max() > 2:
        f = int(np.argmax(counts))
        raise MeshError(f"face {tuple(keys[inverse == f][0])} is shared by {counts[f]} triangles")
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(len(counts)))
    first = order[starts]
    faces = edges[first]
    left = owner[first]
    right = np.full(len(counts), BOUNDARY, dtype=int)
    shared = counts == 2
    second = order[starts[shared] + 1]
    if np.any(np.all(edges[second] == faces[shared], axis=1)):
        raise MeshError("neighbouring triangles have inconsistent orientation")
    right[shared] = owner[second]
    return faces, left, right, inverse.reshape(nt, 3)


def build_union_jack(nx: int, ny: int, domain=(0.0, 1.0, 0.0, 1.0),
                     side_tags: Optional[Mapping[str, BoundaryTag]] = None) -> Mesh:
    """Criss-cross mesh: nx*ny quads each cut into 4 triangles by its diagonals.

    ``domain`` is ``(x0, x1, y0, y1)``; ``side_tags`` maps ``left``, ``right``,
    ``bottom`` and ``top`` to boundary tags (default WALL everywhere).
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"Union Jack mesh needs nx, ny >= 1, got {nx}x{ny}")
    x0, x1, y0, y1 = (float(c) for c in domain)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"Degenerate domain: {domain}")
    sides = {"left": BoundaryTag.WALL, "right": BoundaryTag.WALL,
             "bottom": BoundaryTag.WALL, "top": BoundaryTag.WALL}
    sides.update(side_tags or {})

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    corners = np.column_stack([X.ravel(), Y.ravel()])
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    CX, CY = np.meshgrid(cx, cy)
    centers = np.column_stack([CX.ravel(), CY.ravel()])
    vertices = np.vstack([corners, centers])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i = i.ravel()
    j = j.ravel()
    a = i + (nx + 1) * j
    b = a + 1
    c = b + (nx + 1)
    d = a + (nx + 1)
    m = (nx + 1) * (ny + 1) + i + nx * j
    quads = np.arange(nx * ny)
    triangles = np.stack([
        np.column_stack([a, b, m]),
        np.column_stack([b, c, m]),
        np.column_stack([c, d, m]),
        np.column_stack([d, a, m]),
    ], axis=1).reshape(-1, 3)
    macro_parent = np.repeat(quads, 4)

    edge_tags = {}
    for k in range(nx):
        edge_tags[_edge_key(k, k + 1)] = sides["bottom"]
        top = (nx + 1) * ny + k
        edge_tags[_edge_key(top, top + 1)] = sides["top"]
    for k in range(ny):
        left = (nx + 1) * k
        edge_tags[_edge_key(left, left + nx + 1)] = sides["left"]
        right = left + nx
        edge_tags[_edge_key(right, right + nx + 1)] = sides["right"]

    mesh = Mesh.from_arrays(vertices, triangles, edge_tags, macro_parent, macro_kind="criss_cross")
    logger.info("Union Jack mesh %dx%d: %d vertices, %d triangles", nx, ny,
                mesh.n_vertices, mesh.n_triangles)
    return mesh


def macro_refine(coarse: Mesh, split: str = "alfeld") -> Mesh:
    """Turn every coarse triangle into a macro cell.

    ``alfeld`` inserts the barycentre (3 children, 1 new vertex per triangle);
    ``red`` inserts edge midpoints shared between neighbours (4 children).
    """
    if coarse.macro_kind != "none" or len(coarse.periodic_faces) or len(coarse.slave_vertices):
        raise MeshError("macro_refine expects an unrefined, non-periodic triangulation")
    tri = coarse.triangles
    nv = coarse.n_vertices
    edge_tags = {}
    if split == "alfeld":
        centers = coarse.vertices[tri].mean(axis=1)
        vertices = np.vstack([coarse.vertices, centers])
        m = nv + np.arange(len(tri))
        triangles = np.stack([
            np.column_stack([tri[:, 0], tri[:, 1], m]),
            np.column_stack([tri[:, 1], tri[:, 2], m]),
            np.column_stack([tri[:, 2], tri[:, 0], m]),
        ], axis=1).reshape(-1, 3)
        macro_parent = np.repeat(np.arange(len(tri)), 3)
        for f, tag in coarse.boundary_tags.items():
            edge_tags[_edge_key(*coarse.faces[f])] = tag
    elif split == "red":
        _, _, _, tri_face = _face_connectivity(tri)
        mids = 0.5 * (coarse.vertices[coarse.faces[:, 0]] + coarse.vertices[coarse.faces[:, 1]])
        vertices = np.vstack([coarse.vertices, mids])
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        mab, mbc, mca = (nv + tri_face[:, k] for k in range(3))
        triangles = np.stack([
            np.column_stack([a, mab, mca]),
            np.column_stack([mab, b, mbc]),
            np.column_stack([mca, mbc, c]),
            np.column_stack([mab, mbc, mca]),
        ], axis=1).reshape(-1, 3)
        macro_parent = np.repeat(np.arange(len(tri)), 4)
        for f, tag in coarse.boundary_tags.items():
            p, q = coarse.faces[f]
            mid = nv + f
            edge_tags[_edge_key(p, mid)] = tag
            edge_tags[_edge_key(mid, q)] = tag
    else:
        raise ValueError(f"Unknown macro split: {split}")
    fine = Mesh.from_arrays(vertices, triangles, edge_tags, macro_parent, macro_kind=split)
    logger.info("macro_refine(%s): %d -> %d triangles", split, coarse.n_triangles, fine.n_triangles)
    return fine


def _pair_side(mesh: Mesh, axis: int, tol: float) -> np.ndarray:
    """One-step map sending vertices on the high side of ``axis`` to the low side."""
    lo = mesh.vertices[:, axis].min()
    hi = mesh.vertices[:, axis].max()
    other = 1 - axis
    low_side = np.flatnonzero(np.abs(mesh.vertices[:, axis] - lo) <= tol)
    high_side = np.flatnonzero(np.abs(mesh.vertices[:, axis] - hi) <= tol)
    order = np.argsort(mesh.vertices[low_side, other], kind="stable")
    low_sorted = low_side[order]
    low_coord = mesh.vertices[low_sorted, other]
    mapping = np.arange(mesh.n_vertices)
    for v in high_side:
        y = mesh.vertices[v, other]
        k = int(np.searchsorted(low_coord, y))
        candidates = [c for c in (k - 1, k) if 0 <= c < len(low_coord)]
        best = min(candidates, key=lambda c: abs(low_coord[c] - y), default=None)
        if best is None or abs(low_coord[best] - y) > tol:
            raise MeshError(f"unmatched periodic vertex at {tuple(mesh.vertices[v])}")
        mapping[v] = low_sorted[best]
    if len(high_side) != len(low_side):
        raise MeshError(f"periodic sides along axis {axis} carry {len(low_side)} and {len(high_side)} vertices")
    return mapping


def build_periodicity(mesh: Mesh, directions: Iterable[str]) -> Mesh:
    """Identify opposite sides of the bounding box in the given directions ("x", "y")."""
    directions = sorted({d.lower() for d in directions})
    for d in directions:
        if d not in ("x", "y"):
            raise ValueError(f"Unknown periodic direction: {d}")
    if not directions:
        return mesh
    x0, x1, y0, y1 = mesh.bounding_box
    tol = PERIODIC_MATCH_TOL * max(x1 - x0, y1 - y0)
    steps = {d: _pair_side(mesh, 0 if d == "x" else 1, tol) for d in directions}

    master = np.arange(mesh.n_vertices)
    while True:
        updated = master.copy()
        for d in directions:
            updated = steps[d][updated]
        if np.array_equal(updated, master):
            break
        master = updated

    tags = dict(mesh.boundary_tags)
    boundary_by_key = {_edge_key(*mesh.faces[f]): int(f) for f in mesh.boundary_faces}
    pairs = []
    for d in directions:
        axis = 0 if d == "x" else 1
        hi = x1 if axis == 0 else y1
        lo = x0 if axis == 0 else y0
        tag = BoundaryTag.PERIODIC_X if axis == 0 else BoundaryTag.PERIODIC_Y
        step = steps[d]
        for f in mesh.boundary_faces:
            a, b = mesh.faces[f]
            coords = mesh.vertices[[a, b], axis]
            if np.all(np.abs(coords - hi) <= tol):
                target = boundary_by_key.get(_edge_key(step[a], step[b]))
                if target is None:
                    raise MeshError(f"no periodic partner for face at {tuple(mesh.vertices[a])}")
                pairs.append((int(f), target))
                tags[int(f)] = tag
                tags[target] = tag
            elif np.all(np.abs(coords - lo) <= tol):
                tags[int(f)] = tag
    logger.info("periodicity %s: %d slave vertices, %d face pairs",
                "".join(directions), int(np.sum(master != np.arange(mesh.n_vertices))), len(pairs))
    return replace(mesh, boundary_tags=tags, periodic_master=master,
                   periodic_faces=np.array(pairs, dtype=int).reshape(-1, 2))


def import_mesh(text: str) -> Mesh:
    """Parse the plain-text mesh format.

    Line 1 ``V T B``; then V lines ``x y``, T lines ``i j k`` and B lines
    ``i j tag`` listing the boundary edges. Indices are 0-based.
    """
    lines = [(n, line.split()) for n, line in enumerate(text.splitlines(), start=1)]
    lines = [(n, parts) for n, parts in lines if parts]
    if not lines:
        raise MeshError("empty mesh file", line=1)

    def read(n, parts, count, conv, what):
        if len(parts) != count:
            raise MeshError(f"expected {count} fields for {what}, got {len(parts)}", line=n)
        try:
            return [conv(p) for p in parts]
        except ValueError:
            raise MeshError(f"malformed {what}: {' '.join(parts)}", line=n) from None

    n, header = lines[0]
    nv, nt, nb = read(n, header, 3, int, "header")
    if len(lines) - 1 < nv + nt + nb:
        last = lines[-1][0]
        raise MeshError(f"file ends early: expected {nv + nt + nb} records after the header", line=last)
    body = lines[1:]
    vertices = [read(n, p, 2, float, "vertex") for n, p in body[:nv]]
    for k, (n, _) in enumerate(body[:nv]):
        if not all(np.isfinite(vertices[k])):
            raise MeshError(f"vertex {k} has a non-finite coordinate", line=n)
    triangles = [read(n, p, 3, int, "triangle") for n, p in body[nv:nv + nt]]
    edge_tags = {}
    for n, parts in body[nv + nt:nv + nt + nb]:
        if len(parts) != 3:
            raise MeshError(f"expected 'i j tag' for boundary edge, got {' '.join(parts)}", line=n)
        i, j = read(n, parts[:2], 2, int, "boundary edge")
        if _edge_key(i, j) in edge_tags:
            raise MeshError(f"boundary edge {i}-{j} is listed twice", line=n)
        try:
            edge_tags[_edge_key(i, j)] = BoundaryTag.parse(parts[2])
        except ValueError as exc:
            raise MeshError(str(exc), line=n) from None
    if len(body) > nv + nt + nb:
        raise MeshError("trailing records after boundary section", line=body[nv + nt + nb][0])
    for k, tri in enumerate(triangles):
        if min(tri) < 0 or max(tri) >= nv:
            raise MeshError(f"triangle {k} references a vertex out of range", line=body[nv + k][0], triangle=k)
    mesh = Mesh.from_arrays(vertices, triangles, edge_tags)
    known = {_edge_key(*mesh.faces[f]) for f in mesh.boundary_faces}
    stray = [e for e in edge_tags if e not in known]
    if stray:
        raise MeshError(f"boundary edge {stray[0]} is not on the boundary of the triangulation")
    return mesh


def mesh_to_text(mesh: Mesh) -> str:
    """Serialize an unrefined mesh in the format read by :func:`import_mesh`."""
    out = [f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_faces)}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    out += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    for f in mesh.boundary_faces:
        a, b = mesh.faces[f]
        out.append(f"{a} {b} {mesh.boundary_tags[int(f)].value}")
    return "\n".join(out) + "\n"


def load_mesh(source: Union[str, Path]) -> Mesh:
    """Read a mesh file from a local path or an http(s) URL."""
    source = str(source)
    if source.startswith("http://") or source.startswith("https://"):
        with httpx.Client() as client:
            response = client.get(source, timeout=30.0)
            response.raise_for_status()
            text = response.text
    else:
        with open(source, "r", encoding="utf-8") as f:
            text = f.read()
    return import_mesh(text)


# Channel-with-cylinder geometry.
CHANNEL = (-0.5, 2.0, -0.5, 0.5)
CYLINDER_RADIUS = 0.1


def cylinder_channel_text(n_arc: int = 48, h_far: float = 0.05) -> str:
    """Generate the unstructured channel-with-cylinder mesh as mesh-file text.

    Points: the polygonal cylinder (``n_arc`` segments), staggered rings
    growing geometrically away from it, and a background grid of spacing
    ``h_far``. Triangulated by Delaunay; triangles inside the cylinder are
    dropped.
    """
    if n_arc < 32:
        raise ValueError(f"cylinder needs at least 32 arc segments, got {n_arc}")
    x0, x1, y0, y1 = CHANNEL
    r = CYLINDER_RADIUS
    dtheta = 2.0 * np.pi / n_arc
    points = []
    radius, ring = r, 0
    ring_limit = min(0.3, 0.5 * (y1 - y0) - h_far)
    while radius < ring_limit:
        theta = dtheta * (np.arange(n_arc) + 0.5 * (ring % 2))
        points.append(radius * np.column_stack([np.cos(theta), np.sin(theta)]))
        ring += 1
        radius *= 1.0 + 0.866 * dtheta
    outer = radius
    nx = int(round((x1 - x0) / h_far))
    ny = int(round((y1 - y0) / h_far))
    X, Y = np.meshgrid(np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1))
    grid = np.column_stack([X.ravel(), Y.ravel()])
    keep = np.hypot(grid[:, 0], grid[:, 1]) > outer + 0.5 * h_far
    points.append(grid[keep])
    points = np.vstack(points)

    triangles = Delaunay(points).simplices.copy()
    centroids = points[triangles].mean(axis=1)
    triangles = triangles[np.hypot(centroids[:, 0], centroids[:, 1]) > r]
    flip = _signed_areas(points, triangles) < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    edges = triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
    keys = np.sort(edges, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    boundary = edges[counts[inverse.reshape(-1)] == 1]
    tol = 1e-9
    lines = []
    for a, b in boundary:
        pa, pb = points[a], points[b]
        if abs(pa[0] - x0) < tol and abs(pb[0] - x0) < tol:
            tag = BoundaryTag.INFLOW
        elif abs(pa[0] - x1) < tol and abs(pb[0] - x1) < tol:
            tag = BoundaryTag.OUTFLOW
        elif min(abs(pa[1] - y0), abs(pa[1] - y1)) < tol and min(abs(pb[1] - y0), abs(pb[1] - y1)) < tol:
            tag = BoundaryTag.WALL
        elif abs(np.hypot(*pa) - r) < 1e-6 and abs(np.hypot(*pb) - r) < 1e-6:
            tag = BoundaryTag.CYLINDER
        else:
            raise MeshError(f"boundary edge {a}-{b} at {tuple(pa)} is on no known side")
        lines.append(f"{a} {b} {tag.value}")
    out = [f"{len(points)} {len(triangles)} {len(lines)}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in points]
    out += [f"{i} {j} {k}" for i, j, k in triangles]
    out += lines
    logger.info("cylinder channel: %d points, %d triangles, %d boundary edges",
                len(points), len(triangles), len(lines))
    return "\n".join(out) + "\n"


def build_cylinder_channel(n_arc: int = 48, h_far: float = 0.05) -> Mesh:
    """Coarse (unrefined) channel-with-cylinder mesh, passed through the importer."""
    return import_mesh(cylinder_channel_text(n_arc, h_far))
