import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deqmap import meshgen
from deqmap.mesh import (
    CircularDomainSpec, LandmarkSet, MeshError, ObjParseError, PointLocator, TriangleMesh, as_complex, count_flips,
    edges, euler_characteristic, extract_boundaries, face_area, interpolate_3d, load_obj, locate_point, save_obj,
)


def write(tmp_path, text, name="m.obj"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ---------------------------------------------------------------- OBJ

def test_single_triangle_loads(tmp_path):
    mesh = load_obj(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
    assert mesh.n_vertices == 3 and mesh.n_faces == 1
    assert mesh.uv is None


def test_quad_face_is_rejected(tmp_path):
    with pytest.raises(MeshError):
        load_obj(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"))


def test_malformed_record(tmp_path):
    with pytest.raises(ObjParseError):
        load_obj(write(tmp_path, "v 0 0 zero\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))


def test_missing_file_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="nowhere.obj"):
        load_obj(tmp_path / "nowhere.obj")


@pytest.mark.parametrize(
    "text",
    [
        "v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n",  # collinear
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 5 5 0\nv 6 5 0\nv 5 6 0\nf 1 2 3\nf 4 5 6\n",  # two components
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n",  # index out of range
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3\nf 1 2 4\n",  # inconsistent orientation
    ],
)
def test_topology_errors(tmp_path, text):
    with pytest.raises(MeshError):
        load_obj(write(tmp_path, text))


def test_negative_indices_and_slashes(tmp_path):
    mesh = load_obj(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf -3/1 -2/2 -1/3\n"))
    assert mesh.faces.tolist() == [[0, 1, 2]]
    np.testing.assert_array_equal(mesh.uv, [[0, 0], [1, 0], [0, 1]])


def test_round_trip_with_embedding(tmp_path, annulus):
    z = as_complex(annulus.vertices) * 0.5
    path = tmp_path / "a.obj"
    save_obj(annulus, path, embedding=z)
    text = path.read_text()
    assert sum(line.startswith("vt ") for line in text.splitlines()) == annulus.n_vertices
    back = load_obj(path)
    np.testing.assert_array_equal(back.faces, annulus.faces)
    np.testing.assert_array_equal(back.vertices, annulus.vertices)
    np.testing.assert_array_equal(as_complex(back.uv), z)


def test_large_round_trip(tmp_path):
    mesh = meshgen.grid_mesh(71)  # 10082 faces
    assert mesh.n_faces > 10000
    path = tmp_path / "g.obj"
    save_obj(mesh, path)
    back = load_obj(path)
    assert np.max(np.abs(back.vertices - mesh.vertices)) <= 1e-6
    np.testing.assert_array_equal(back.faces, mesh.faces)


# ---------------------------------------------------------------- boundaries

def test_boundary_counts(disk, annulus):
    assert [lp.kind for lp in extract_boundaries(disk)] == ["outer"]
    loops = extract_boundaries(annulus)
    assert [lp.kind for lp in loops] == ["outer", "inner"]
    r = np.abs(as_complex(annulus.vertices))
    assert np.allclose(r[loops[0].vertices], 1.0)
    assert np.allclose(r[loops[1].vertices], 0.5)


def test_three_hole_mesh_euler():
    mesh = meshgen.circular_domain_mesh([0.45, -0.25 + 0.4j, -0.25 - 0.4j], [0.15, 0.15, 0.15], h=0.08)
    loops = extract_boundaries(mesh)
    k = len(loops) - 1
    assert k == 3
    assert euler_characteristic(mesh) == 1 - k


def test_loops_partition_boundary(annulus):
    loops = extract_boundaries(annulus)
    all_b = np.concatenate([lp.vertices for lp in loops])
    assert len(all_b) == len(np.unique(all_b))
    # every boundary edge belongs to exactly one face and appears in exactly one loop
    e = edges(annulus.faces)
    counts = {}
    for f in annulus.faces:
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            key = (min(a, b), max(a, b))
            counts[key] = counts.get(key, 0) + 1
    boundary_edges = {k for k, c in counts.items() if c == 1}
    loop_edges = {(min(a, b), max(a, b)) for lp in loops for a, b in zip(lp.vertices, np.roll(lp.vertices, -1))}
    assert loop_edges == boundary_edges
    assert len(e) == len(counts)


def test_loops_keep_surface_on_left(annulus):
    z = as_complex(annulus.vertices)
    for lp in extract_boundaries(annulus):
        w = z[lp.vertices]
        area = 0.5 * np.sum(w.real * np.roll(w.imag, -1) - np.roll(w.real, -1) * w.imag)
        assert (area > 0) == (lp.kind == "outer")


def test_outer_loop_chosen_from_embedding():
    mesh = meshgen.annulus_mesh(0.5, h=0.15)
    z = as_complex(mesh.vertices)
    inv = 0.5 / np.conj(z)  # swaps the roles of the two circles
    loops = extract_boundaries(mesh, inv)
    assert np.allclose(np.abs(z[loops[0].vertices]), 0.5)


# ---------------------------------------------------------------- areas and flips

def test_face_area_examples():
    tri = np.array([[0, 1, 2]])
    assert face_area(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), tri, 0) == pytest.approx(0.5)
    assert face_area(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float), tri, 0) == 0
    eq = np.array([[0, 0, 0], [2, 0, 0], [1, np.sqrt(3), 0]])
    assert face_area(eq, tri, 0) == pytest.approx(np.sqrt(3), rel=1e-14)


def test_flips_of_identity_and_reflection(disk):
    z = as_complex(disk.vertices)
    assert count_flips(z, disk.faces) == 0
    interior = np.setdiff1d(np.arange(disk.n_vertices), extract_boundaries(disk)[0].vertices)
    v = int(interior[0])
    f = disk.faces[np.flatnonzero((disk.faces == v).any(axis=1))[0]]
    a, b = [int(u) for u in f if u != v]
    w = z.copy()
    d = z[b] - z[a]
    w[v] = z[a] + d * np.conj((z[v] - z[a]) / d)  # mirror across the opposite edge
    assert count_flips(w, disk.faces) >= 1


# ---------------------------------------------------------------- point location

def test_locate_centroid(disk):
    z = as_complex(disk.vertices)
    face, w = locate_point(z, disk.faces, z[disk.faces[17]].mean())
    assert face == 17
    np.testing.assert_allclose(w, [1 / 3, 1 / 3, 1 / 3], atol=1e-12)


def test_locate_outside_and_in_hole(annulus):
    z = as_complex(annulus.vertices)
    assert locate_point(z, annulus.faces, 1.2 + 0.3j) is None
    assert locate_point(z, annulus.faces, 0.1j) is None


def test_locator_matches_brute_force(annulus, rng):
    z = as_complex(annulus.vertices)
    loc = PointLocator(z, annulus.faces)
    pts = rng.uniform(-1, 1, 400) + 1j * rng.uniform(-1, 1, 400)
    for p in pts:
        hit = loc.locate(p)
        w_all = np.array([
            np.linalg.solve(np.array([[1, 1, 1], z[f].real, z[f].imag]), [1, p.real, p.imag]) for f in annulus.faces
        ])
        inside = np.flatnonzero(w_all.min(axis=1) >= -1e-12)
        if hit is None:
            assert len(inside) == 0
        else:
            face, w = hit
            assert face in inside
            assert abs(w @ z[annulus.faces[face]] - p) < 1e-12


def test_interpolate_3d_examples():
    mesh = TriangleMesh(np.array([[0, 0, 1], [2, 0, 1], [0, 2, 1.0]]), np.array([[0, 1, 2]]))
    np.testing.assert_array_equal(interpolate_3d(mesh, 0, [1, 0, 0]), [0, 0, 1])
    np.testing.assert_allclose(interpolate_3d(mesh, 0, [1 / 3] * 3), mesh.vertices.mean(axis=0))


@given(st.floats(-0.95, 0.95), st.floats(-0.95, 0.95))
def test_locate_then_interpolate_is_identity_on_flat_mesh(x, y):
    mesh = _FLAT
    p = complex(x, y)
    hit = _FLAT_LOCATOR.locate(p)
    if abs(p) < 0.97:
        assert hit is not None
    if hit is not None:
        face, w = hit
        assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-15
        q = interpolate_3d(mesh, face, w)
        assert abs(complex(q[0], q[1]) - p) < 1e-12 and q[2] == 0


_FLAT = meshgen.disk_mesh(h=0.12)
_FLAT_LOCATOR = PointLocator(as_complex(_FLAT.vertices), _FLAT.faces)


# ---------------------------------------------------------------- small types

def test_domain_spec_invariants():
    assert CircularDomainSpec([0.3], [0.2]).is_valid()
    assert not CircularDomainSpec([0.9], [0.2]).is_valid()
    assert not CircularDomainSpec([0.2, -0.2], [0.25, 0.25]).is_valid()
    with pytest.raises(ValueError):
        CircularDomainSpec([0.9], [0.2]).validate()


def test_landmarks_must_be_distinct():
    with pytest.raises(ValueError):
        LandmarkSet([1, 1], [0.1, 0.2])
    assert len(LandmarkSet.empty()) == 0
