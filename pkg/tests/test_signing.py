"""Tests for voxel labeling, sign determination and SDF grids."""

import numpy as np
import pytest

from mesh3d_bench import shapes
from mesh3d_bench.errors import (
    DomainTooTight,
    GridFormatError,
    InvalidGridSpec,
    NoOutsideNeighbor,
)
from mesh3d_bench.geometry import Aabb, TriangleMesh
from mesh3d_bench.signing import (
    GRID_HEADER,
    GridKind,
    GridSpec,
    ScalarGrid,
    SignMethod,
    VoxelLabel,
    VoxelLabelGrid,
    compute_sdf,
    flood_fill_outside,
    label_inside,
    label_voxels,
    mark_surface_voxels,
    occupancy_grid,
    read_grid,
    remove_interior_surface_voxels,
    sign_field,
    sign_surface_voxel,
    write_grid,
)
from mesh3d_bench.spatial import SpatialIndex


@pytest.fixture
def sphere():
    """Icosphere of radius 0.4 with 1280 faces."""
    return shapes.icosphere(radius=0.4, subdivisions=3)


def analytic_sphere_sdf(spec: GridSpec, radius: float, cutoff: float) -> np.ndarray:
    x, y, z = np.meshgrid(*(spec.axis_centers(a) for a in range(3)), indexing="ij")
    return np.clip(np.sqrt(x**2 + y**2 + z**2) - radius, -cutoff, cutoff)


def analytic_box_sdf(spec: GridSpec, half: float, cutoff: float) -> np.ndarray:
    x, y, z = np.meshgrid(*(spec.axis_centers(a) for a in range(3)), indexing="ij")
    q = np.stack([np.abs(x), np.abs(y), np.abs(z)], axis=-1) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return np.clip(outside + inside, -cutoff, cutoff)


class TestGridSpec:
    """Test grid geometry."""

    def test_resolution_minimum(self):
        """Test that fewer than 8 voxels per axis is rejected."""
        with pytest.raises(InvalidGridSpec):
            GridSpec.default(4)

    def test_domain_must_be_cubic(self):
        """Test that a box-shaped domain is rejected."""
        with pytest.raises(InvalidGridSpec):
            GridSpec(16, Aabb([-1, -1, -1], [1, 1, 2]))

    def test_voxel_centers(self):
        """Test voxel size and center placement."""
        spec = GridSpec.default(10)
        assert spec.voxel_size == pytest.approx(0.15)
        np.testing.assert_allclose(spec.center((0, 0, 0)), [-0.675] * 3)
        np.testing.assert_allclose(spec.axis_centers(0)[-1], 0.675)
        centers = spec.centers()
        assert centers.shape == (1000, 3)
        np.testing.assert_allclose(centers[1], [-0.525, -0.675, -0.675])


class TestLabeling:
    """Test the four labeling passes."""

    def test_box_labels(self):
        """Test that a closed box has inside, surface and outside voxels only."""
        labels = label_voxels(shapes.box(), GridSpec.default(16))
        counts = labels.counts()
        assert counts["unlabeled"] == 0
        assert counts["inside"] > 0 and counts["surface"] > 0 and counts["outside"] > 0
        assert labels.labels[8, 8, 8] == VoxelLabel.INSIDE
        assert labels.labels[0, 0, 0] == VoxelLabel.OUTSIDE

    def test_surface_voxels_overlap_triangles(self):
        """Test that the sheet marks one layer of voxels around its plane."""
        labels = mark_surface_voxels(shapes.sheet(size=0.5, z=0.01), GridSpec.default(16))
        surface = np.argwhere(labels.mask(VoxelLabel.SURFACE))
        assert set(surface[:, 2]) == {8}

    def test_mesh_outside_domain(self):
        """Test that a mesh larger than the domain is rejected."""
        with pytest.raises(DomainTooTight):
            mark_surface_voxels(shapes.box(extents=(1.6, 1.6, 1.6)), GridSpec.default(16))

    def test_mesh_in_outer_shell(self):
        """Test that a mesh touching the outermost voxel layer is rejected."""
        with pytest.raises(DomainTooTight):
            mark_surface_voxels(shapes.box(extents=(1.4, 1.4, 1.4)), GridSpec.default(8))

    def test_interior_shell_is_absorbed(self):
        """Test that a closed inner shell does not create an outside cavity."""
        spec = GridSpec.default(32)
        labels = label_voxels(shapes.nested_boxes(), spec)
        assert labels.labels[16, 16, 16] == VoxelLabel.INSIDE
        assert labels.counts()["unlabeled"] == 0

    def test_open_box_interior_is_outside(self):
        """Test that flood fill enters a box through its hole."""
        labels = label_voxels(shapes.open_box(), GridSpec.default(32))
        assert labels.labels[16, 16, 16] == VoxelLabel.OUTSIDE

    def test_inner_shell_surface_is_removed(self):
        """Test that surface voxels out of reach of the outside become inside."""
        spec = GridSpec.default(32)
        flooded = flood_fill_outside(mark_surface_voxels(shapes.nested_boxes(), spec))
        assert flooded.labels[19, 16, 16] == VoxelLabel.SURFACE
        cleaned = remove_interior_surface_voxels(flooded)
        assert cleaned.labels[19, 16, 16] == VoxelLabel.UNLABELED
        assert cleaned.labels[22, 16, 16] == VoxelLabel.SURFACE
        final = label_inside(cleaned)
        assert final.labels[19, 16, 16] == VoxelLabel.INSIDE
        assert final.counts()["unlabeled"] == 0

    def test_flood_fill_leaves_surface_untouched(self):
        """Test that flooding only changes unlabeled voxels."""
        marked = mark_surface_voxels(shapes.box(), GridSpec.default(16))
        flooded = flood_fill_outside(marked)
        surface = marked.mask(VoxelLabel.SURFACE)
        np.testing.assert_array_equal(flooded.mask(VoxelLabel.SURFACE), surface)
        assert not flooded.mask(VoxelLabel.INSIDE).any()


class TestSigns:
    """Test sign determination."""

    def test_surface_voxel_without_outside_neighbor(self):
        """Test that an enclosed surface voxel cannot be signed."""
        spec = GridSpec.default(8)
        grid = np.full(spec.shape, VoxelLabel.INSIDE, dtype=np.uint8)
        grid[4, 4, 4] = VoxelLabel.SURFACE
        index = SpatialIndex(shapes.box())
        with pytest.raises(NoOutsideNeighbor):
            sign_surface_voxel(VoxelLabelGrid(spec, grid), index, (4, 4, 4))

    def test_non_surface_voxel(self):
        """Test that only surface voxels take the plane test."""
        labels = label_voxels(shapes.box(), GridSpec.default(16))
        with pytest.raises(ValueError):
            sign_surface_voxel(labels, SpatialIndex(shapes.box()), (0, 0, 0))

    def test_surface_voxel_sign_matches_containment(self, sphere):
        """Test the plane test on every surface voxel of a sphere."""
        spec = GridSpec.default(16)
        labels = label_voxels(sphere, spec)
        index = SpatialIndex(sphere)
        surface = np.argwhere(labels.mask(VoxelLabel.SURFACE))
        agree = 0
        for voxel in surface:
            inside = np.linalg.norm(spec.center(voxel)) < 0.4
            agree += sign_surface_voxel(labels, index, voxel) == (-1 if inside else 1)
        assert agree / len(surface) >= 0.95

    def test_methods_agree_on_watertight_input(self, sphere):
        """Test flood fill against ray parity on a closed sphere."""
        spec = GridSpec.default(32)
        flood = sign_field(sphere, spec, SignMethod.FLOOD_FILL).signs
        parity = sign_field(sphere, spec, SignMethod.RAYCAST_PARITY).signs
        assert np.mean(flood == parity) >= 0.999

    def test_methods_differ_on_nested_shells(self):
        """Test that parity keeps the cavity of a hollow cube outside."""
        spec = GridSpec.default(32)
        mesh = shapes.nested_boxes()
        assert sign_field(mesh, spec, SignMethod.FLOOD_FILL).signs[16, 16, 16] == -1
        assert sign_field(mesh, spec, SignMethod.RAYCAST_PARITY).signs[16, 16, 16] == 1


class TestSdf:
    """Test truncated signed distance grids."""

    def test_sphere_accuracy(self, sphere):
        """Test the flood-fill SDF against the analytic sphere distance."""
        spec = GridSpec.default(64)
        grid = compute_sdf(sphere, spec, SignMethod.FLOOD_FILL, cutoff=0.2)
        expected = analytic_sphere_sdf(spec, 0.4, 0.2)
        band = np.abs(expected) < 0.2
        error = np.abs(grid.values - expected)[band]
        assert error.max() <= 1.5 * spec.voxel_size
        assert grid.values.min() >= -0.2 and grid.values.max() <= 0.2

    @pytest.mark.parametrize("method", [SignMethod.FLOOD_FILL, SignMethod.RAYCAST_PARITY])
    def test_box_error_shrinks_with_resolution(self, method):
        """Test that the band error against the analytic box distance never grows with N."""
        mesh = shapes.box()
        errors = []
        for n in (32, 64, 128):
            spec = GridSpec.default(n)
            grid = compute_sdf(mesh, spec, method, cutoff=0.2)
            expected = analytic_box_sdf(spec, 0.25, 0.2)
            error = np.abs(grid.values - expected)[np.abs(expected) < 0.2]
            assert error.max() <= 1.5 * spec.voxel_size
            errors.append(float(error.mean()))
        assert errors[1] <= errors[0] + 1e-12
        assert errors[2] <= errors[1] + 1e-12

    def test_inside_is_negative(self, sphere):
        """Test sign convention at the center and a corner."""
        grid = compute_sdf(sphere, GridSpec.default(16))
        assert grid.values[8, 8, 8] < 0.0
        assert grid.values[0, 0, 0] == pytest.approx(0.2)

    def test_empty_mesh_is_all_cutoff(self, caplog):
        """Test that a mesh without faces yields +cutoff everywhere."""
        mesh = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        grid = compute_sdf(mesh, GridSpec.default(8), cutoff=0.1)
        np.testing.assert_array_equal(grid.values, 0.1)
        assert "EmptyMesh" in caplog.text

    def test_occupancy(self, sphere):
        """Test that occupancy marks inside voxel centers."""
        grid = occupancy_grid(sphere, GridSpec.default(16))
        assert grid.kind == GridKind.OCCUPANCY
        assert grid.values[8, 8, 8] == 1.0
        assert grid.values[0, 0, 0] == 0.0
        assert set(np.unique(grid.values)) <= {0.0, 1.0}

    def test_jobs_do_not_change_values(self, sphere):
        """Test that the grid is identical for one and many workers."""
        spec = GridSpec.default(24)
        one = compute_sdf(sphere, spec, jobs=1)
        many = compute_sdf(sphere, spec, jobs=4)
        np.testing.assert_array_equal(one.values, many.values)


class TestGridFiles:
    """Test the SDFG binary format."""

    def test_write_read(self, tmp_path, sphere):
        """Test that a grid survives a write and read at float32 precision."""
        grid = compute_sdf(sphere, GridSpec.default(16))
        path = write_grid(grid, tmp_path / "sphere.sdfg")
        assert path.stat().st_size == GRID_HEADER.size + 4 * 16**3
        again = read_grid(path)
        assert again.spec.resolution == 16
        assert again.kind == GridKind.SDF
        assert again.cutoff == pytest.approx(0.2)
        np.testing.assert_allclose(again.values, grid.values, atol=1e-7)

    def test_x_varies_fastest(self, tmp_path):
        """Test the on-disk voxel order."""
        spec = GridSpec.default(8)
        values = np.zeros(spec.shape)
        values[1, 0, 0] = 1.0
        path = write_grid(ScalarGrid(spec, values, GridKind.SDF, 1.0), tmp_path / "order.sdfg")
        body = np.frombuffer(path.read_bytes(), dtype="<f4", offset=GRID_HEADER.size)
        assert body[1] == 1.0

    def test_bad_magic(self, tmp_path):
        """Test that a foreign file is rejected."""
        path = tmp_path / "bad.sdfg"
        path.write_bytes(b"NOPE" + bytes(GRID_HEADER.size))
        with pytest.raises(GridFormatError):
            read_grid(path)

    def test_truncated(self, tmp_path, sphere):
        """Test that a short body is rejected."""
        path = write_grid(compute_sdf(sphere, GridSpec.default(8)), tmp_path / "short.sdfg")
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(GridFormatError):
            read_grid(path)
