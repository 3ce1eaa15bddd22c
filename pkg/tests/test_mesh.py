import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrcauchy.geometry import PolygonSpec, l_shape, unit_square
from qrcauchy.mesh import (
    MeshError,
    generate_structured,
    polygon_area_check,
    read_mesh,
    refine_levels,
    refine_uniform,
    refine_with_transfer,
    validate,
    write_mesh,
)


def _euler(mesh):
    return mesh.n_nodes - len(mesh.edges()) + mesh.n_triangles


def test_square_n2_counts(square):
    m = generate_structured(square, 2)
    assert (m.n_nodes, m.n_triangles, len(m.boundary_edges)) == (9, 8, 8)
    assert m.h == pytest.approx(math.sqrt(2) / 2)


def test_square_n4_counts(square):
    m = generate_structured(square, 4)
    assert (m.n_nodes, m.n_triangles) == (25, 32)


def test_lshape_n4_counts(lshape):
    m = generate_structured(lshape, 4)
    # oracle: enumerate the grid cells of the three kept quadrants
    cells = [(i, j) for i in range(4) for j in range(4) if not (i >= 2 and j >= 2)]
    corners = {(i + a, j + b) for i, j in cells for a in (0, 1) for b in (0, 1)}
    assert m.n_triangles == 2 * len(cells) == 24
    assert m.n_nodes == len(corners) == 21
    assert polygon_area_check(m, lshape) < 1e-12


def test_node_ordering_lexicographic(lshape):
    m = generate_structured(lshape, 8)
    order = np.lexsort((m.nodes[:, 0], m.nodes[:, 1]))
    assert np.array_equal(order, np.arange(m.n_nodes))


def test_refine_counts(square, lshape):
    m = generate_structured(square, 2)
    r = refine_uniform(m)
    assert r.n_triangles == 32
    assert r.h == pytest.approx(m.h / 2)
    assert r.n_nodes == m.n_nodes + len(m.edges())
    assert refine_uniform(generate_structured(lshape, 4)).n_triangles == 96


def test_refine_tags_propagate(lshape):
    m = generate_structured(lshape, 4)
    r = refine_uniform(m)
    fine_tag = {tuple(sorted(e)): t for e, t in zip(r.boundary_edges.tolist(), r.boundary_tags)}
    lookup = {tuple(np.round(p, 12)): i for i, p in enumerate(r.nodes)}
    for (a, b), tag in zip(m.boundary_edges.tolist(), m.boundary_tags):
        pa, pb = m.nodes[a], m.nodes[b]
        ia, ib = lookup[tuple(np.round(pa, 12))], lookup[tuple(np.round(pb, 12))]
        im = lookup[tuple(np.round(0.5 * (pa + pb), 12))]
        assert fine_tag[tuple(sorted((ia, im)))] == tag
        assert fine_tag[tuple(sorted((im, ib)))] == tag


def test_prolongation_reproduces_linear_functions(square):
    m = generate_structured(square, 4)
    fine, P = refine_levels(m, 2)
    lin = lambda p: 2.0 * p[:, 0] - 3.0 * p[:, 1] + 0.5
    assert np.allclose(P @ lin(m.nodes), lin(fine.nodes), atol=1e-14)
    _, P1 = refine_with_transfer(m)
    assert P1.shape == (refine_uniform(m).n_nodes, m.n_nodes)


def test_round_trip_bit_exact(tmp_path, lshape):
    m = refine_uniform(generate_structured(lshape, 4))
    path = tmp_path / "m.txt"
    write_mesh(m, path)
    back = read_mesh(path)
    assert back == m
    assert np.array_equal(back.nodes, m.nodes)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.boundary_edges, m.boundary_edges)
    assert list(back.boundary_tags) == list(m.boundary_tags)


def _lines(mesh, tmp_path):
    path = tmp_path / "m.txt"
    write_mesh(mesh, path)
    return path, path.read_text().splitlines()


def test_read_rejects_bad_index(tmp_path, square):
    m = generate_structured(square, 2)
    path, lines = _lines(m, tmp_path)
    lines[1 + m.n_nodes] = f"0 1 {m.n_nodes}"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MeshError) as err:
        read_mesh(path)
    assert err.value.line == 2 + m.n_nodes


def test_read_rejects_interior_boundary_edge(tmp_path, square):
    m = generate_structured(square, 2)
    path, lines = _lines(m, tmp_path)
    centre = int(np.argmin(np.abs(m.nodes - 0.5).sum(1)))
    lines[-1] = f"0 {centre} G"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MeshError, match="not on the mesh boundary"):
        read_mesh(path)


@pytest.mark.parametrize("header", ["nodes 3 triangles", "nodes x triangles 1 bedges 1", "vertices 9 triangles 8 bedges 8"])
def test_read_rejects_bad_header(tmp_path, header):
    path = tmp_path / "bad.txt"
    path.write_text(header + "\n")
    with pytest.raises(MeshError) as err:
        read_mesh(path)
    assert err.value.line == 1


def test_read_rejects_unknown_tag(tmp_path, square):
    m = generate_structured(square, 2)
    path, lines = _lines(m, tmp_path)
    a, b, _ = lines[-1].split()
    lines[-1] = f"{a} {b} X"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MeshError, match="tag"):
        read_mesh(path)


def test_unsupported_polygon_points_to_file_ingestion():
    tri = PolygonSpec([(0, 0), (1, 0), (0, 1)], ["G", "GT", "GT"])
    with pytest.raises(MeshError, match="read_mesh"):
        generate_structured(tri, 4)
    with pytest.raises(MeshError):
        generate_structured(unit_square(), 1)


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(["square", "lshape"]), st.sampled_from([2, 4, 6, 8, 12]), st.integers(0, 1))
def test_mesh_invariants(geom, n, levels):
    spec = unit_square() if geom == "square" else l_shape()
    m = generate_structured(spec, n)
    if levels:
        m, _ = refine_levels(m, levels)
    validate(m)
    assert np.all(m.signed_areas() > 0)
    assert _euler(m) == 1
    assert polygon_area_check(m, spec) < 1e-12
    assert math.degrees(m.min_angle()) >= 20.0
    if geom == "square":
        assert m.h == pytest.approx(math.sqrt(2) / (n * 2 ** levels))
