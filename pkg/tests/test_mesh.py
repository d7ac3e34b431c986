import math

import numpy as np
import pytest

from ecgi.mesh import (Adjacency, MeshError, OffFormatError, TriMesh,
                       build_adjacency, icosphere, load_off, save_off,
                       vertex_normals)


def tetrahedron():
    verts = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, -1.0],
                      [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
    faces = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriMesh(verts, faces)


def test_trimesh_validation():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    mesh = TriMesh(verts, np.array([[0, 1, 2]]))
    assert mesh.n_vertices == 3 and mesh.n_faces == 1
    assert not mesh.is_closed
    with pytest.raises(MeshError):
        TriMesh(verts, np.array([[0, 1, 3]]))  # index out of range
    with pytest.raises(MeshError):
        TriMesh(verts, np.array([[0, 1, 1]]))  # degenerate face
    with pytest.raises(MeshError):
        TriMesh(np.vstack([verts, verts[0]]),
                np.array([[0, 1, 3]]))  # zero-area (coincident verts)


def test_trimesh_arrays_frozen():
    mesh = tetrahedron()
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 5.0


def test_tetrahedron_is_closed():
    assert tetrahedron().is_closed


def test_edges_unique_sorted():
    mesh = tetrahedron()
    edges = mesh.edges()
    assert edges.shape == (6, 2)  # complete graph on 4 vertices
    assert np.all(edges[:, 0] < edges[:, 1])
    assert len({tuple(e) for e in edges}) == 6


def test_icosphere_vertex_count():
    # subdividing a 12-vertex icosahedron s times gives 10*4^s + 2 vertices
    for s in range(4):
        mesh = icosphere(s, 1.0)
        assert mesh.n_vertices == 10 * 4 ** s + 2
        assert mesh.n_faces == 20 * 4 ** s
        assert mesh.is_closed


def test_icosphere_radius():
    rng = np.random.default_rng(3)
    for _ in range(5):
        r = float(rng.uniform(0.5, 20.0))
        mesh = icosphere(2, r)
        norms = np.linalg.norm(mesh.vertices, axis=1)
        assert np.allclose(norms, r, rtol=1e-12)


def test_icosphere_rejects_bad_args():
    with pytest.raises(ValueError):
        icosphere(7, 1.0)
    with pytest.raises(ValueError):
        icosphere(-1, 1.0)
    with pytest.raises(ValueError):
        icosphere(1, 0.0)


def test_adjacency_tetrahedron():
    mesh = tetrahedron()
    adj = build_adjacency(mesh)
    side = math.sqrt(8.0)
    for i in range(4):
        assert sorted(adj.neighbors[i]) == [j for j in range(4) if j != i]
        assert np.allclose(adj.distances[i], side)
        assert math.isclose(adj.ring_radius[i], side)


def test_adjacency_euler_consistency():
    # sum of 1-ring degrees equals twice the edge count
    mesh = icosphere(2, 1.0)
    adj = build_adjacency(mesh)
    degs = sum(len(n) for n in adj.neighbors)
    assert degs == 2 * len(mesh.edges())


def test_adjacency_symmetric():
    mesh = icosphere(1, 2.0)
    adj = build_adjacency(mesh)
    for i in range(mesh.n_vertices):
        for j, d in zip(adj.neighbors[i], adj.distances[i]):
            k = list(adj.neighbors[j]).index(i)
            assert math.isclose(adj.distances[j][k], d)


def test_vertex_normals_sphere_outward():
    mesh = icosphere(2, 3.0)
    normals = vertex_normals(mesh)
    assert np.allclose(np.linalg.norm(normals, axis=1), 1.0)
    radial = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1,
                                            keepdims=True)
    # on a sphere the vertex normal is (nearly) radial
    assert np.all(np.sum(normals * radial, axis=1) > 0.99)


def test_off_round_trip(tmp_path):
    mesh = icosphere(1, 1.5)
    path = tmp_path / "m.off"
    save_off(mesh, path)
    back = load_off(path)
    assert np.allclose(back.vertices, mesh.vertices, rtol=1e-8)
    assert np.array_equal(back.faces, mesh.faces)


def test_off_header_literal(tmp_path):
    path = tmp_path / "m.off"
    save_off(tetrahedron(), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "OFF"
    assert lines[1].split()[:2] == ["4", "4"]
    # face rows start with the arity
    assert lines[6].split()[0] == "3"


@pytest.mark.parametrize("text,kind", [
    ("OFZ\n3 1 0\n", "header"),
    ("OFF\n3 x 0\n", "counts"),
    ("OFF\n3 1 0\n0 0 0\n1 0 nope\n0 1 0\n3 0 1 2\n", "vertex"),
    ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n4 0 1 2 0\n", "face-arity"),
    ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n", "face-index"),
])
def test_off_load_errors(tmp_path, text, kind):
    path = tmp_path / "bad.off"
    path.write_text(text)
    with pytest.raises(OffFormatError) as exc:
        load_off(path)
    assert exc.value.kind == kind
