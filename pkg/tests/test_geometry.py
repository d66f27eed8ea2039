"""Tests for the mesh and point-cloud data model."""

import numpy as np
import pytest

from mesh3d_bench import shapes
from mesh3d_bench.errors import DegenerateExtent, DegenerateMesh, ParseError
from mesh3d_bench.geometry import (
    Aabb,
    PointCloud,
    TriangleMesh,
    load_cloud,
    load_mesh,
    make_rng,
    normalize_to_unit_cube,
    sample_surface,
    write_mesh,
)
from mesh3d_bench.spatial import SpatialIndex


@pytest.fixture
def quad_obj(tmp_path):
    """OBJ file with a comment, a quad and a triangle after a late vertex."""
    path = tmp_path / "quad.obj"
    path.write_text(
        "# unit square\n"
        "v 0 0 0\n"
        "v 1 0 0\n"
        "v 1 1 0\n"
        "v 0 1 0\n"
        "f 1 2 3 4\n"
        "v 0 0 1\n"
        "f 5 1 2\n"
    )
    return path


class TestObjIo:
    """Test OBJ reading and writing."""

    def test_load_triangulates_polygons(self, quad_obj):
        """Test that a quad becomes two triangles and vertex order is kept."""
        mesh = load_mesh(quad_obj)
        np.testing.assert_array_equal(mesh.vertices[4], [0.0, 0.0, 1.0])
        assert len(mesh.faces) == 3
        assert mesh.area == pytest.approx(1.5)
        assert frozenset([4, 0, 1]) in {frozenset(face) for face in mesh.faces.tolist()}

    def test_load_cube(self, tmp_path):
        """Test that a written cube reads back with 8 vertices and 12 faces."""
        mesh = load_mesh(write_mesh(shapes.box(), tmp_path / "cube.obj"))
        assert mesh.vertices.shape == (8, 3)
        assert mesh.faces.shape == (12, 3)
        assert mesh.is_closed

    def test_load_rejects_missing_vertex(self, tmp_path):
        """Test that a face index past the last vertex is a parse error."""
        path = tmp_path / "bad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 2 9\n")
        with pytest.raises(ParseError) as exc:
            load_mesh(path)
        assert exc.value.details["path"] == str(path)
        assert exc.value.exit_code == 2

    def test_load_without_faces_is_empty(self, tmp_path, caplog):
        """Test that a file without face records yields an empty mesh and a warning."""
        path = tmp_path / "points.obj"
        path.write_text("v 0 0 0\nv 1 0 0\n")
        assert load_mesh(path).is_empty
        assert "EmptyMesh" in caplog.text

    def test_write_then_load_keeps_topology(self, tmp_path):
        """Test that written meshes read back with the same faces."""
        mesh = shapes.icosphere(subdivisions=1)
        path = write_mesh(mesh, tmp_path / "sphere.obj")
        again = load_mesh(path)
        np.testing.assert_array_equal(again.faces, mesh.faces)
        np.testing.assert_allclose(again.vertices, mesh.vertices, atol=1e-8)


class TestTriangleMesh:
    """Test mesh invariants and derived properties."""

    def test_face_index_out_of_range(self):
        """Test that faces must index existing vertices."""
        with pytest.raises(ValueError):
            TriangleMesh([[0, 0, 0]], [[0, 1, 2]])

    def test_box_is_closed_and_open_box_is_not(self):
        """Test edge-incidence closedness."""
        assert shapes.box().is_closed
        assert not shapes.open_box().is_closed
        assert not shapes.sheet().is_closed

    def test_area_and_normals(self):
        """Test face areas and unit normals of a flat sheet."""
        mesh = shapes.sheet(size=2.0)
        assert mesh.area == pytest.approx(4.0)
        np.testing.assert_allclose(mesh.face_normals, [[0, 0, 1], [0, 0, 1]])

    def test_degenerate_face_has_zero_normal(self):
        """Test that collinear faces are flagged invalid."""
        mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
        assert not mesh.valid_faces.any()
        np.testing.assert_array_equal(mesh.face_normals, [[0, 0, 0]])

    def test_aabb_rejects_inverted_bounds(self):
        """Test that min must not exceed max."""
        with pytest.raises(ValueError):
            Aabb([1, 0, 0], [0, 1, 1])


class TestNormalize:
    """Test unit-cube normalization."""

    def test_longest_side_is_one_and_centered(self):
        """Test the normalized bounding box."""
        mesh = shapes.box(extents=(4.0, 2.0, 1.0)).transformed(1.0, np.array([3.0, -1.0, 5.0]))
        normalized, transform = normalize_to_unit_cube(mesh)
        bounds = normalized.bounds
        assert bounds.extent.max() == pytest.approx(1.0)
        np.testing.assert_allclose(bounds.center, 0.0, atol=1e-12)
        assert transform.scale == pytest.approx(0.25)
        np.testing.assert_allclose(transform.apply(mesh.vertices), normalized.vertices)

    def test_idempotent(self):
        """Test that normalizing a normalized mesh changes nothing."""
        mesh = shapes.torus().transformed(3.0, np.array([1.0, 2.0, -4.0]))
        once, _ = normalize_to_unit_cube(mesh)
        twice, transform = normalize_to_unit_cube(once)
        np.testing.assert_allclose(twice.vertices, once.vertices, atol=1e-6)
        assert transform.scale == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(transform.translation, 0.0, atol=1e-6)

    def test_coincident_vertices(self):
        """Test that a zero-extent mesh cannot be normalized."""
        mesh = TriangleMesh([[1, 1, 1]] * 3, [[0, 1, 2]])
        with pytest.raises(DegenerateExtent):
            normalize_to_unit_cube(mesh)


class TestSampling:
    """Test area-weighted surface sampling."""

    def test_seed_and_stream_determinism(self):
        """Test that (seed, stream) fixes the samples."""
        mesh = shapes.box()
        a = sample_surface(mesh, 500, seed=7)
        b = sample_surface(mesh, 500, seed=7)
        c = sample_surface(mesh, 500, seed=7, stream=1)
        np.testing.assert_array_equal(a.positions, b.positions)
        assert not np.array_equal(a.positions, c.positions)

    def test_samples_lie_on_the_surface(self):
        """Test that samples of a sheet stay inside the square."""
        cloud = sample_surface(shapes.sheet(size=0.5, z=0.1), 2000, seed=1)
        assert len(cloud) == 2000
        np.testing.assert_allclose(cloud.positions[:, 2], 0.1)
        assert np.all(np.abs(cloud.positions[:, :2]) <= 0.25 + 1e-12)
        np.testing.assert_allclose(np.linalg.norm(cloud.normals, axis=1), 1.0)

    def test_area_weighting(self):
        """Test that a face three times larger receives three times the samples."""
        vertices = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 0, 0], [8, 0, 0], [5, 1, 0]]
        mesh = TriangleMesh(vertices, [[0, 1, 2], [3, 4, 5]])
        cloud = sample_surface(mesh, 20000, seed=3)
        share = np.mean(cloud.positions[:, 0] < 2.0)
        assert share == pytest.approx(0.25, abs=0.02)

    def test_per_face_counts_follow_area(self):
        """Test per-triangle sample counts on a unit cube against a multinomial."""
        mesh = shapes.box(extents=(1.0, 1.0, 1.0))
        n = 60_000
        cloud = sample_surface(mesh, n, seed=13)
        faces = SpatialIndex(mesh).closest_points(cloud.positions).faces
        counts = np.bincount(faces, minlength=12)
        p = 1.0 / 12
        sigma = np.sqrt(n * p * (1.0 - p))
        assert np.all(np.abs(counts - n * p) <= 3.0 * sigma)

    def test_zero_area_mesh(self):
        """Test that a mesh without area cannot be sampled."""
        mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
        with pytest.raises(DegenerateMesh):
            sample_surface(mesh, 10, seed=0)

    def test_rng_streams_are_independent(self):
        """Test that streams with one seed differ and repeat."""
        assert make_rng(1, 0).random() == make_rng(1, 0).random()
        assert make_rng(1, 0).random() != make_rng(1, 1).random()


class TestPointClouds:
    """Test point-cloud loading."""

    def test_npy_with_normals(self, tmp_path):
        """Test an (n, 6) array with unit normals."""
        data = np.zeros((4, 6))
        data[:, 0] = np.arange(4)
        data[:, 5] = 1.0
        path = tmp_path / "cloud.npy"
        np.save(path, data)
        cloud = load_cloud(path, samples=10, seed=0)
        assert len(cloud) == 4
        np.testing.assert_array_equal(cloud.normals[:, 2], 1.0)

    def test_npy_wrong_shape(self, tmp_path):
        """Test that an (n, 2) array is rejected."""
        path = tmp_path / "flat.npy"
        np.save(path, np.zeros((4, 2)))
        with pytest.raises(ParseError):
            load_cloud(path, samples=10, seed=0)

    def test_obj_is_sampled_after_normalization(self, tmp_path):
        """Test that a mesh file yields a normalized sample cloud."""
        path = write_mesh(shapes.box(extents=(4.0, 4.0, 4.0)), tmp_path / "big.obj")
        cloud = load_cloud(path, samples=300, seed=0, normalize=True)
        assert len(cloud) == 300
        assert np.abs(cloud.positions).max() <= 0.5 + 1e-9

    def test_normals_must_be_unit(self):
        """Test that non-unit normals are rejected."""
        with pytest.raises(ValueError):
            PointCloud(np.zeros((2, 3)), np.ones((2, 3)))
