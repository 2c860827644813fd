"""Mesh construction, refinement, periodicity and the text format."""

import httpx
import numpy as np
import pytest

from smagfem.errors import MeshError
from smagfem.mesh import (BOUNDARY, CYLINDER_RADIUS, BoundaryTag, Mesh, build_cylinder_channel,
                          build_periodicity, build_union_jack, cylinder_channel_text, import_mesh, load_mesh,
                          macro_refine, mesh_to_text)

SQUARE = """4 2 4
0 0
1 0
1 1
0 1
0 1 2
0 2 3
0 1 wall
1 2 outflow
2 3 wall
3 0 inflow
"""


def test_union_jack_counts_and_area():
    mesh = build_union_jack(2, 3)
    assert mesh.n_vertices == 3 * 4 + 2 * 3
    assert mesh.n_triangles == 24
    assert mesh.n_macro == 6
    assert mesh.macro_kind == "criss_cross"
    # Euler characteristic of a disk.
    assert len(mesh.faces) == mesh.n_vertices + mesh.n_triangles - 1
    assert len(mesh.boundary_faces) == 2 * (2 + 3)
    assert mesh.areas.sum() == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(mesh.macro_areas, 1.0 / 6.0, rtol=1e-12)


def test_union_jack_rejects_bad_sizes():
    with pytest.raises(ValueError):
        build_union_jack(0, 2)
    with pytest.raises(ValueError):
        build_union_jack(2, 2, (1.0, 0.0, 0.0, 1.0))


def test_interior_face_normals_are_consistent():
    mesh = build_union_jack(3, 3)
    interior = mesh.interior_faces
    assert np.all(mesh.face_right[interior] != BOUNDARY)
    # The normal points from the left triangle's centroid towards the right one.
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    offset = centroids[mesh.face_right[interior]] - centroids[mesh.face_left[interior]]
    assert np.all(np.einsum("fd,fd->f", offset, mesh.face_normals[interior]) > 0.0)


def test_side_tags():
    mesh = build_union_jack(2, 2, side_tags={"left": BoundaryTag.INFLOW, "right": BoundaryTag.OUTFLOW})
    assert len(mesh.faces_with_tag(BoundaryTag.INFLOW)) == 2
    assert len(mesh.faces_with_tag(BoundaryTag.OUTFLOW)) == 2
    assert len(mesh.faces_with_tag(BoundaryTag.WALL)) == 4


def test_periodicity_single_direction():
    mesh = build_periodicity(build_union_jack(1, 1), ("x",))
    assert len(mesh.slave_vertices) == 2
    slaves = mesh.slave_vertices
    np.testing.assert_allclose(mesh.vertices[slaves, 0] - mesh.vertices[mesh.periodic_master[slaves], 0], 1.0)
    np.testing.assert_allclose(mesh.vertices[slaves, 1], mesh.vertices[mesh.periodic_master[slaves], 1])
    assert len(mesh.periodic_faces) == 1


def test_double_periodicity_resolves_corners_to_origin():
    mesh = build_periodicity(build_union_jack(4, 4), ("x", "y"))
    assert len(mesh.slave_vertices) == 9
    assert len(mesh.periodic_faces) == 8
    corners = [v for v in range(mesh.n_vertices)
               if np.all(np.isin(mesh.vertices[v], [0.0, 1.0]))]
    assert {int(mesh.periodic_master[v]) for v in corners} == {0}
    assert set(mesh.boundary_tags.values()) == {BoundaryTag.PERIODIC_X, BoundaryTag.PERIODIC_Y}


def test_periodicity_empty_is_identity():
    mesh = build_union_jack(2, 2)
    assert build_periodicity(mesh, ()) is mesh
    with pytest.raises(ValueError):
        build_periodicity(mesh, ("z",))


def test_import_square():
    mesh = import_mesh(SQUARE)
    assert mesh.n_vertices == 4
    assert mesh.n_triangles == 2
    assert mesh.macro_kind == "none"
    assert len(mesh.faces_with_tag(BoundaryTag.INFLOW)) == 1
    assert mesh.areas.sum() == pytest.approx(1.0)


def test_import_single_triangle():
    mesh = import_mesh("3 1 3\n0 0\n1 0\n0 1\n0 1 2\n0 1 wall\n1 2 wall\n2 0 wall\n")
    assert (mesh.n_vertices, mesh.n_triangles) == (3, 1)


def test_import_rejects_inverted_triangle():
    text = SQUARE.replace("0 2 3\n", "0 3 2\n")
    with pytest.raises(MeshError) as info:
        import_mesh(text)
    assert info.value.triangle == 1
    assert "triangle 1" in str(info.value)


def test_import_reports_line_numbers():
    with pytest.raises(MeshError) as info:
        import_mesh(SQUARE.replace("1 1\n", "1 x\n"))
    assert info.value.line == 4
    with pytest.raises(MeshError, match="line 11"):
        import_mesh(SQUARE.replace("3 0 inflow", "3 0 sideways"))
    with pytest.raises(MeshError):
        import_mesh(SQUARE.replace("3 0 inflow\n", ""))
    with pytest.raises(MeshError):
        import_mesh("")


def test_import_rejects_non_finite_vertex():
    with pytest.raises(MeshError, match="non-finite") as info:
        import_mesh(SQUARE.replace("1 1\n", "nan 1\n"))
    assert info.value.line == 4
    with pytest.raises(MeshError, match="vertex 2 has a non-finite"):
        Mesh.from_arrays([[0.0, 0.0], [1.0, 0.0], [np.inf, 1.0]], [[0, 1, 2]], {})


def test_import_rejects_repeated_boundary_edge():
    text = SQUARE.replace("4 2 4\n", "4 2 5\n") + "0 1 inflow\n"
    with pytest.raises(MeshError, match="listed twice") as info:
        import_mesh(text)
    assert info.value.line == 12


def test_mesh_text_round_trip():
    mesh = import_mesh(SQUARE)
    again = import_mesh(mesh_to_text(mesh))
    np.testing.assert_array_equal(again.vertices, mesh.vertices)
    np.testing.assert_array_equal(again.triangles, mesh.triangles)
    assert sorted(t.value for t in again.boundary_tags.values()) == \
        sorted(t.value for t in mesh.boundary_tags.values())


@pytest.mark.parametrize("split,children", [("alfeld", 3), ("red", 4)])
def test_macro_refine(split, children):
    coarse = import_mesh(SQUARE)
    fine = macro_refine(coarse, split)
    assert fine.n_triangles == children * coarse.n_triangles
    assert fine.n_macro == coarse.n_triangles
    assert fine.macro_kind == split
    assert fine.areas.sum() == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(fine.macro_areas, coarse.areas, rtol=1e-12)
    expected_boundary = len(coarse.boundary_faces) * (2 if split == "red" else 1)
    assert len(fine.boundary_faces) == expected_boundary
    assert len(fine.faces_with_tag(BoundaryTag.INFLOW)) == expected_boundary // 4


def test_macro_refine_rejects_refined_or_unknown():
    with pytest.raises(MeshError):
        macro_refine(build_union_jack(2, 2))
    with pytest.raises(ValueError):
        macro_refine(import_mesh(SQUARE), "green")


def test_cylinder_channel():
    with pytest.raises(ValueError):
        cylinder_channel_text(n_arc=16)
    mesh = build_cylinder_channel(n_arc=32, h_far=0.1)
    tags = set(mesh.boundary_tags.values())
    assert tags == {BoundaryTag.INFLOW, BoundaryTag.OUTFLOW, BoundaryTag.WALL, BoundaryTag.CYLINDER}
    arc = mesh.faces[mesh.faces_with_tag(BoundaryTag.CYLINDER)]
    assert len(arc) == 32
    np.testing.assert_allclose(np.hypot(*mesh.vertices[arc.ravel()].T), CYLINDER_RADIUS, rtol=1e-12)
    hole = np.pi * CYLINDER_RADIUS ** 2
    polygon = 0.5 * 32 * CYLINDER_RADIUS ** 2 * np.sin(2.0 * np.pi / 32)
    assert mesh.areas.sum() == pytest.approx(2.5 - polygon, rel=1e-12)
    assert mesh.areas.sum() > 2.5 - hole


def test_load_mesh_from_path_and_url(tmp_path, monkeypatch):
    path = tmp_path / "square.msh"
    path.write_text(SQUARE)
    assert load_mesh(path).n_triangles == 2

    def handler(request):
        return httpx.Response(200, text=SQUARE) if request.url.path == "/square.msh" else httpx.Response(404)

    transport = httpx.MockTransport(handler)
    real_client = httpx.Client
    monkeypatch.setattr(httpx, "Client", lambda **kw: real_client(transport=transport, **kw))
    mesh = load_mesh("https://meshes.test/square.msh")
    assert mesh.faces_with_tag(BoundaryTag.INFLOW).size == 1
    with pytest.raises(httpx.HTTPStatusError):
        load_mesh("https://meshes.test/missing.msh")
