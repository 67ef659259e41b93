import numpy as np
import pytest

from bevkit.geometry import ContractViolation, GridSpec, bev_index
from bevkit.kitti import PointCloud
from bevkit.voxels import (FEATURE_DIM, encode_sample, main_point, ndt_encode,
                           voxelize)

from conftest import random_frustum_cloud


def brute_force_cells(points, grid):
    """Double loop over cells: membership by testing every point per cell."""
    cells = {}
    for u in range(grid.n_x):
        for v in range(grid.n_y):
            members = [i for i, p in enumerate(points) if bev_index(p, grid) == (u, v)]
            if members:
                cells[(u, v)] = members
    return cells


def brute_force_binning(points, grid):
    """Per-point scalar binning, the fast independent oracle for big grids."""
    cells = {}
    for i, p in enumerate(points):
        cell = bev_index(p, grid)
        if cell is not None:
            cells.setdefault(cell, []).append(i)
    return cells


def two_pass_stats(points):
    """Textbook two-pass mean / population covariance / extremes."""
    n = len(points)
    mean = [sum(p[k] for p in points) / n for k in range(3)]
    cov = [[sum((p[a] - mean[a]) * (p[b] - mean[b]) for p in points) / n
            for b in range(3)] for a in range(3)]
    mins = [min(p[k] for p in points) for k in range(3)]
    maxs = [max(p[k] for p in points) for k in range(3)]
    return mean, cov, mins, maxs


class TestVoxelize:
    def test_two_points_one_cell(self):
        grid = GridSpec(0, 10, -5, 5, 1.0, 1.0)
        cloud = PointCloud(np.array([[3.2, 0.1, 0.0], [3.9, 0.8, 1.0]]))
        voxels = voxelize(cloud, grid)
        assert len(voxels) == 1
        assert (voxels[0].u, voxels[0].v) == (3, 5)
        assert voxels[0].point_indices.tolist() == [0, 1]

    def test_boundary_straddle(self):
        grid = GridSpec(0, 10, -5, 5, 1.0, 1.0)
        cloud = PointCloud(np.array([[0.999, 0.0, 0.0], [1.0, 0.0, 0.0]]))
        voxels = voxelize(cloud, grid)
        assert [(v.u, v.v) for v in voxels] == [(0, 5), (1, 5)]

    def test_sorted_by_cell(self, rng):
        grid = GridSpec(0, 10, -5, 5, 0.5, 0.5)
        cloud = PointCloud(rng.uniform([0, -5, -1], [10, 5, 1], (300, 3)))
        voxels = voxelize(cloud, grid)
        cells = [(v.u, v.v) for v in voxels]
        assert cells == sorted(cells)

    def test_matches_double_loop_over_cells(self, rng):
        grid = GridSpec(0, 8, -4, 4, 1.0, 1.0)
        points = rng.uniform([-1, -5, -1], [9, 5, 1], (200, 3))
        expected = brute_force_cells(points, grid)
        got = {(v.u, v.v): v.point_indices.tolist() for v in voxelize(PointCloud(points), grid)}
        assert got == expected

    def test_matches_per_point_binning_on_fine_grid(self, rng):
        grid = GridSpec(0, 50, -25, 25, 0.0625, 0.0625)
        points = rng.uniform([-5, -30, -2], [55, 30, 2], (1000, 3))
        expected = brute_force_binning(points, grid)
        got = {(v.u, v.v): v.point_indices.tolist() for v in voxelize(PointCloud(points), grid)}
        assert got == expected

    def test_subset_property(self, rng):
        grid = GridSpec(0, 20, -10, 10, 0.5, 0.5)
        cloud = random_frustum_cloud(rng, 500)
        full_cells = {(v.u, v.v) for v in voxelize(cloud, grid)}
        subset = cloud.select(rng.choice(500, size=120, replace=False))
        sub_cells = {(v.u, v.v) for v in voxelize(subset, grid)}
        assert sub_cells <= full_cells

    def test_empty_cloud(self):
        grid = GridSpec(0, 10, -5, 5, 1.0, 1.0)
        assert voxelize(PointCloud(np.zeros((0, 3))), grid) == []


class TestNdtEncode:
    def test_single_point_degenerate(self):
        feat = ndt_encode(np.array([[1.0, 2.0, 3.0]]))
        np.testing.assert_array_equal(feat.mean, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(feat.cov, np.zeros(6))
        np.testing.assert_array_equal(feat.extremes, [1, 2, 3, 1, 2, 3])

    def test_two_point_population_covariance(self):
        feat = ndt_encode(np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))
        np.testing.assert_array_equal(feat.mean, [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(feat.cov, [1.0, 0, 0, 0, 0, 0])

    def test_matches_two_pass_oracle(self, rng):
        for _ in range(50):
            pts = rng.normal(scale=2.0, size=(int(rng.integers(2, 50)), 3))
            feat = ndt_encode(pts)
            mean, cov, mins, maxs = two_pass_stats(pts.tolist())
            np.testing.assert_allclose(feat.mean, mean, rtol=1e-9, atol=1e-12)
            got = feat.cov_matrix()
            np.testing.assert_allclose(got, cov, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(feat.extremes, mins + maxs, rtol=0, atol=0)

    def test_covariance_psd_and_bounded(self, rng):
        for _ in range(100):
            pts = rng.uniform(-3, 3, size=(int(rng.integers(1, 30)), 3))
            feat = ndt_encode(pts)
            eigvals = np.linalg.eigvalsh(feat.cov_matrix())
            assert eigvals.min() >= -1e-9
            extent = feat.extremes[3:] - feat.extremes[:3]
            diag = np.diag(feat.cov_matrix())
            assert np.all(diag <= (extent / 2.0) ** 2 + 1e-12)
            assert np.all(feat.extremes[:3] <= feat.mean + 1e-12)
            assert np.all(feat.mean <= feat.extremes[3:] + 1e-12)

    def test_permutation_invariance(self, rng):
        pts = rng.normal(size=(40, 3))
        base = ndt_encode(pts).as_vector()
        for _ in range(5):
            shuffled = ndt_encode(pts[rng.permutation(40)]).as_vector()
            np.testing.assert_allclose(shuffled, base, rtol=0, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            ndt_encode(np.zeros((0, 3)))


class TestMainPoint:
    def test_single_point(self):
        np.testing.assert_array_equal(main_point([[4.0, 5.0, 6.0]]), [4.0, 5.0, 6.0])

    def test_enumerated_example(self):
        pts = np.array([[0.0, 0, 0], [10.0, 0, 0], [1.0, 0, 0]])
        np.testing.assert_array_equal(main_point(pts), [1.0, 0, 0])

    def test_symmetric_tie_takes_first(self):
        pts = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
        np.testing.assert_array_equal(main_point(pts), [1.0, 0, 0])

    def test_matches_exhaustive_scan(self, rng):
        # the scan shares the mean (validated separately against the two-pass
        # oracle) and independently enumerates distances with the index rule
        for _ in range(300):
            n = int(rng.integers(1, 12))
            pts = rng.uniform(-4, 4, size=(n, 3))
            if rng.uniform() < 0.3 and n >= 3:
                pts[1] = pts[0]  # exact duplicate: guaranteed tie
            got = main_point(pts)
            mean = np.mean(pts, axis=0)
            best, best_d = None, None
            for p in pts:
                d = sum((p[k] - mean[k]) ** 2 for k in range(3))
                if best_d is None or d < best_d:
                    best, best_d = p, d
            np.testing.assert_array_equal(got, best)

    def test_exact_mirror_ties_take_lower_index(self):
        # quarter-grid coordinates make the mean and both distances exact
        m = np.array([2.25, -1.5, 0.75])
        d = np.array([0.5, 0.25, -0.75])
        pts = np.stack([m + d, m - d])
        np.testing.assert_array_equal(main_point(pts), m + d)
        np.testing.assert_array_equal(main_point(pts[::-1]), m - d)

    def test_inside_own_cell(self, rng):
        grid = GridSpec(0, 20, -10, 10, 0.5, 0.5)
        cloud = random_frustum_cloud(rng, 400)
        for voxel in voxelize(cloud, grid):
            mp = main_point(cloud.points[voxel.point_indices])
            assert bev_index(mp, grid) == (voxel.u, voxel.v)


class TestEncodeSample:
    def test_cloud_behind_camera(self, rig):
        grid = GridSpec(0, 50, -25, 25, 0.25, 0.25)
        # LiDAR x is camera depth for this rig; x > 0 but pointing away needs x < 0
        cloud = PointCloud(np.array([[-5.0, 0.0, 0.0], [-8.0, 2.0, 0.5]]))
        grid_neg = GridSpec(-50, 50, -25, 25, 0.25, 0.25)
        sample = encode_sample(cloud, grid_neg, rig)
        assert len(sample) == 0

    def test_single_voxel_composition(self, rig):
        grid = GridSpec(0, 50, -25, 25, 0.25, 0.25)
        pts = np.array([[10.0, 1.0, -0.5], [10.1, 1.05, -0.4]])
        sample = encode_sample(PointCloud(pts), grid, rig)
        assert len(sample) == 1  # both points share the 0.25 m cell
        pixels, valid = rig.project_points(main_point(pts))
        assert valid[0]
        np.testing.assert_allclose(sample.image_coords[0], pixels[0], atol=1e-12)
        np.testing.assert_array_equal(sample.main_points[0], main_point(pts))

    def test_oracle_composition(self, rig, rng):
        grid = GridSpec(0, 50, -25, 25, 0.25, 0.25)
        cloud = random_frustum_cloud(rng, 1500)
        sample = encode_sample(cloud, grid, rig)
        # independent composition: brute-force binning then projection filter
        cells = {}
        for i, p in enumerate(cloud.points):
            cell = bev_index(p, grid)
            if cell is not None:
                cells.setdefault(cell, []).append(i)
        expected = 0
        for cell, members in cells.items():
            mp = main_point(cloud.points[members])
            pix, valid = rig.project_points(mp)
            if valid[0]:
                expected += 1
        assert len(sample) == expected
        assert sample.features.shape == (expected, FEATURE_DIM)
        assert np.all(np.isfinite(sample.features))

    def test_unique_bev_cells(self, rig, rng):
        grid = GridSpec(0, 50, -25, 25, 0.25, 0.25)
        sample = encode_sample(random_frustum_cloud(rng, 800), grid, rig)
        cells = {tuple(c) for c in sample.bev_indices}
        assert len(cells) == len(sample)

    def test_lidar_only_variant_keeps_off_image_voxels(self, rig, rng):
        grid = GridSpec(0, 50, -25, 25, 0.25, 0.25)
        pts = np.vstack([rng.uniform([5, -2, -1], [40, 2, 1], (200, 3)),
                         [[10.0, 20.0, 0.0]]])  # far left, outside the image
        cloud = PointCloud(pts)
        fused = encode_sample(cloud, grid, rig, require_in_image=True)
        full = encode_sample(cloud, grid, rig, require_in_image=False)
        assert len(full) > len(fused)
        off_image = np.isnan(full.image_coords).any(axis=1)
        assert not np.isnan(full.image_coords[~off_image]).any()

    def test_permutation_invariance(self, rig, rng):
        grid = GridSpec(0, 50, -25, 25, 0.25, 0.25)
        cloud = random_frustum_cloud(rng, 600)
        base = encode_sample(cloud, grid, rig)
        shuffled = encode_sample(cloud.select(rng.permutation(len(cloud))), grid, rig)
        np.testing.assert_array_equal(base.bev_indices, shuffled.bev_indices)
        np.testing.assert_allclose(base.features, shuffled.features, atol=1e-12)
        # main points are only order-independent where distances to the mean
        # are distinct; a two-point voxel is an exact mathematical tie
        distinct = np.zeros(len(base), dtype=bool)
        voxels = {(v.u, v.v): v for v in voxelize(cloud, grid)}
        for i, (u, v) in enumerate(base.bev_indices):
            member = cloud.points[voxels[(u, v)].point_indices]
            diff = member - member.mean(axis=0)
            d = np.sort(np.einsum("ij,ij->i", diff, diff))
            distinct[i] = len(d) == 1 or (d[1] - d[0]) > 1e-9 * max(d[1], 1e-30)
        assert distinct.sum() > len(base) // 2
        np.testing.assert_array_equal(base.main_points[distinct],
                                      shuffled.main_points[distinct])
