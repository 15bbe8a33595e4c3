import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sscrs.core.grid import (LabelGrid, PointCloud, VoxelGridSpec, REDUCE_MAX, REDUCE_MEAN, REDUCE_SUM,
                             apply_flip, bev_key, block_factors, build_point_features, downsample_invalid,
                             downsample_labels, downsample_occupancy, random_flip, scatter_reduce, voxelize)


class TestVoxelGridSpec:
    """Grid geometry."""

    def test_desk_grid(self):
        spec = VoxelGridSpec.desk()
        assert spec.dims == (64, 64, 8)
        assert_allclose(spec.extent, [12.8, 12.8, 1.6])

    def test_full_scale_grid(self):
        spec = VoxelGridSpec.full_scale()
        assert spec.num_voxels == 256 * 256 * 32

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            VoxelGridSpec((0.0, 0.0, 0.0), 0.0, (4, 4, 4))
        with pytest.raises(ValueError):
            VoxelGridSpec((0.0, 0.0, 0.0), 0.2, (4, 0, 4))

    def test_downscaled_keeps_extent_one(self):
        spec = VoxelGridSpec((0.0, 0.0, 0.0), 0.2, (8, 8, 1))
        coarse = spec.downscaled()
        assert coarse.dims == (4, 4, 1)
        assert coarse.voxel_size == pytest.approx(0.4)

    def test_block_factors(self):
        assert block_factors((8, 4, 1)) == (2, 2, 1)
        with pytest.raises(ValueError):
            block_factors((6, 3, 2))


class TestVoxelize:
    """Half-open binning of points."""

    def test_bins_are_half_open(self):
        spec = VoxelGridSpec((0.0, 0.0, 0.0), 1.0, (4, 4, 4))
        points = PointCloud(np.array([[0.0, 0.0, 0.0], [0.999, 1.0, 3.5], [4.0, 0.0, 0.0], [-0.001, 1.0, 1.0]]))
        indices, mask = voxelize(points, spec)
        assert_array_equal(mask, [True, True, False, False])
        assert_array_equal(indices, [[0, 0, 0], [0, 1, 3]])

    def test_point_features(self):
        spec = VoxelGridSpec((0.0, 0.0, 0.0), 1.0, (2, 2, 2))
        points = PointCloud(np.array([[0.25, 1.5, 1.75]]), np.array([0.5]))
        features = build_point_features(points, spec)
        assert features.shape == (1, 7)
        assert_allclose(features[0], [0.25, 1.5, 1.75, -0.25, 0.0, 0.25, 0.5])

    def test_random_points(self, rng):
        spec = VoxelGridSpec((0.0, -6.4, -2.0), 0.2, (64, 64, 8))
        pos = rng.uniform([-1.0, -8.0, -3.0], [14.0, 8.0, 0.5], size=(10000, 3))
        points = PointCloud(pos)
        indices, mask = voxelize(points, spec)
        p = points.positions.astype(np.float64)
        oracle = np.floor((p - np.asarray(spec.origin)) / spec.voxel_size)
        inside = np.all((oracle >= 0) & (oracle < np.asarray(spec.dims)), axis=1)
        assert_array_equal(mask, inside)
        assert_array_equal(indices, oracle[inside])
        offsets = build_point_features(points, spec)[:, 3:6]
        assert np.all(offsets >= -spec.voxel_size / 2 - 1e-9)
        assert np.all(offsets < spec.voxel_size / 2 + 1e-9)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[np.nan, 0.0, 0.0]]))

    def test_bev_key(self, tiny_spec):
        assert bev_key((2, 3, 1), tiny_spec) == 2 * 8 + 3
        assert_array_equal(bev_key(np.array([[0, 1, 0], [1, 0, 3]]), tiny_spec), [1, 8])


class TestScatterReduce:
    """Grouping rows by key."""

    def test_reductions(self):
        features = np.array([[1.0, -2.0], [3.0, 5.0], [-1.0, 0.0]])
        keys = np.array([4, 2, 4])
        unique, out = scatter_reduce(features, keys, REDUCE_MAX)
        assert_array_equal(unique, [2, 4])
        assert_allclose(out, [[3.0, 5.0], [1.0, 0.0]])
        _, out = scatter_reduce(features, keys, REDUCE_MEAN)
        assert_allclose(out, [[3.0, 5.0], [0.0, -1.0]])
        _, out = scatter_reduce(features, keys, REDUCE_SUM)
        assert_allclose(out, [[3.0, 5.0], [0.0, -2.0]])

    @pytest.mark.parametrize("reduce", [REDUCE_MAX, REDUCE_MEAN, REDUCE_SUM])
    def test_matches_per_key_loop(self, rng, reduce):
        ops = {REDUCE_MAX: np.max, REDUCE_MEAN: np.mean, REDUCE_SUM: np.sum}
        features = rng.standard_normal((1000, 4))
        keys = rng.integers(0, 50, size=1000) * 3
        unique, out = scatter_reduce(features, keys, reduce)
        assert_array_equal(unique, np.sort(np.unique(keys)))
        for u, row in zip(unique, out):
            assert_allclose(row, ops[reduce](features[keys == u], axis=0), rtol=1e-12, atol=1e-12)
        perm = rng.permutation(1000)
        unique_p, out_p = scatter_reduce(features[perm], keys[perm], reduce)
        assert_array_equal(unique_p, unique)
        assert_allclose(out_p, out, rtol=1e-12, atol=1e-12)

    def test_max_is_idempotent(self, rng):
        features = rng.standard_normal((200, 3))
        keys = rng.integers(0, 20, size=200)
        unique, out = scatter_reduce(features, keys, REDUCE_MAX)
        again_keys, again = scatter_reduce(out, unique, REDUCE_MAX)
        assert_array_equal(again_keys, unique)
        assert_array_equal(again, out)

    def test_empty_input(self):
        unique, out = scatter_reduce(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
        assert len(unique) == 0
        assert out.shape == (0, 3)

    def test_rejects_negative_keys(self):
        with pytest.raises(ValueError):
            scatter_reduce(np.zeros((1, 1)), np.array([-1]))


class TestDownsampling:
    """Halving label, occupancy and invalid grids."""

    def test_majority_with_smallest_id_on_ties(self):
        labels = np.zeros((2, 2, 2), dtype=np.uint8)
        labels[0, 0, 0] = 5
        labels[1, 0, 0] = 3
        coarse = downsample_labels(LabelGrid(labels))
        assert coarse.dims == (1, 1, 1)
        assert coarse.labels[0, 0, 0] == 3
        assert not coarse.invalid[0, 0, 0]

    def test_empty_voxels_dont_vote(self):
        labels = np.zeros((2, 2, 2), dtype=np.uint8)
        labels[0, 0, 0] = 7
        assert downsample_labels(LabelGrid(labels)).labels[0, 0, 0] == 7

    def test_invalid_voxels_dont_vote(self):
        labels = np.zeros((2, 2, 2), dtype=np.uint8)
        labels[0, 0, 0] = 2
        labels[0, 0, 1] = 2
        labels[1, 1, 1] = 4
        invalid = np.zeros((2, 2, 2), dtype=bool)
        invalid[0, 0, :] = True
        coarse = downsample_labels(LabelGrid(labels, invalid))
        assert coarse.labels[0, 0, 0] == 4
        assert not coarse.invalid[0, 0, 0]

    def test_all_non_empty_invalid(self):
        labels = np.zeros((2, 2, 2), dtype=np.uint8)
        labels[0, 0, 0] = 2
        invalid = np.zeros((2, 2, 2), dtype=bool)
        invalid[0, 0, 0] = True
        coarse = downsample_labels(LabelGrid(labels, invalid))
        assert coarse.labels[0, 0, 0] == 2
        assert coarse.invalid[0, 0, 0]

    def test_empty_block(self):
        coarse = downsample_labels(LabelGrid(np.zeros((2, 2, 2))))
        assert coarse.labels[0, 0, 0] == 0
        assert not coarse.invalid[0, 0, 0]
        coarse = downsample_labels(LabelGrid(np.zeros((2, 2, 2)), np.ones((2, 2, 2), dtype=bool)))
        assert coarse.invalid[0, 0, 0]

    def test_occupancy_and_invalid(self):
        occ = np.zeros((4, 4, 2), dtype=bool)
        occ[3, 3, 1] = True
        coarse = downsample_occupancy(occ)
        assert coarse.shape == (2, 2, 1)
        assert coarse.sum() == 1 and coarse[1, 1, 0]
        invalid = np.zeros((4, 4, 2), dtype=bool)
        invalid[:2, :2, :] = True
        invalid[2, 2, 0] = True
        coarse = downsample_invalid(invalid)
        assert_array_equal(coarse[:, :, 0], [[True, False], [False, False]])

    @pytest.mark.parametrize("a,b", [(2, 5), (5, 2), (1, 19)])
    def test_two_class_blocks_exhaustive(self, a, b):
        blocks = np.array(list(itertools.product([0, a, b], repeat=8)), dtype=np.uint8)
        labels = blocks.reshape((-1, 2, 2, 2)).reshape((-1, 2, 2))
        coarse = downsample_labels(LabelGrid(labels))
        for i, block in enumerate(blocks):
            na, nb = np.sum(block == a), np.sum(block == b)
            if na == 0 and nb == 0:
                expected = 0
            elif na != nb:
                expected = a if na > nb else b
            else:
                expected = min(a, b)
            assert coarse.labels[i, 0, 0] == expected

    def test_occupancy_matches_block_loop(self, rng):
        for _ in range(20):
            occ = rng.random((8, 8, 8)) < 0.1
            coarse = downsample_occupancy(occ)
            for i, j, k in itertools.product(range(4), repeat=3):
                assert coarse[i, j, k] == occ[2 * i:2 * i + 2, 2 * j:2 * j + 2, 2 * k:2 * k + 2].any()

    def test_occupancy_single_block_exhaustive(self):
        for bits in itertools.product([False, True], repeat=8):
            occ = np.array(bits).reshape((2, 2, 2))
            assert downsample_occupancy(occ)[0, 0, 0] == any(bits)

    def test_height_of_one_stays(self):
        labels = np.ones((4, 4, 1), dtype=np.uint8)
        assert downsample_labels(LabelGrid(labels)).dims == (2, 2, 1)


class TestFlip:
    """Mirroring scenes about the grid's mid-planes."""

    def test_flip_keeps_points_in_their_voxels(self, tiny_scene, tiny_spec):
        points, (occ, gt) = apply_flip(tiny_scene.points, [tiny_scene.input_occupancy, tiny_scene.gt],
                                       tiny_spec, True, True)
        indices, mask = voxelize(points, tiny_spec)
        assert mask.all()
        assert occ[indices[:, 0], indices[:, 1], indices[:, 2]].all()
        assert_array_equal(gt.labels, tiny_scene.gt.labels[::-1, ::-1, :])

    def test_double_flip_is_identity(self, tiny_scene, tiny_spec):
        points, grids = apply_flip(tiny_scene.points, [tiny_scene.gt], tiny_spec, True, False)
        points, grids = apply_flip(points, grids, tiny_spec, True, False)
        assert_allclose(points.positions, tiny_scene.points.positions, atol=1e-5)
        assert_array_equal(grids[0].labels, tiny_scene.gt.labels)

    def test_point_on_origin_stays_in_grid(self):
        # bounds exactly representable in float32
        spec = VoxelGridSpec((0.0, -1.0, -0.5), 0.25, (8, 8, 4))
        points = PointCloud(np.array([spec.origin]))
        flipped, _ = apply_flip(points, [], spec, True, True)
        indices, mask = voxelize(flipped, spec)
        assert mask.all()
        assert_array_equal(indices, [[7, 7, 0]])

    def test_far_corner_stays_outside(self):
        spec = VoxelGridSpec((0.0, -1.0, -0.5), 0.25, (8, 8, 4))
        corner = np.asarray(spec.origin) + spec.extent * np.array([1.0, 1.0, 0.5])
        flipped, _ = apply_flip(PointCloud(corner[None, :]), [], spec, True, True)
        _, mask = voxelize(flipped, spec)
        assert not mask.any()

    def test_revoxelized_flip_mirrors_indices(self, rng, tiny_spec):
        origin = np.asarray(tiny_spec.origin)
        dims = np.asarray(tiny_spec.dims)
        inside = origin + rng.random((2000, 3)) * tiny_spec.extent
        edges = origin + rng.integers(0, dims + 1, size=(500, 3)) * tiny_spec.voxel_size
        outside = origin + (rng.random((200, 3)) * 1.4 - 0.2) * tiny_spec.extent
        points = PointCloud(np.concatenate([inside, edges, outside]))
        before, mask = voxelize(points, tiny_spec)
        for flip_x, flip_y in [(True, False), (False, True), (True, True)]:
            flipped, _ = apply_flip(points, [], tiny_spec, flip_x, flip_y)
            after, flipped_mask = voxelize(flipped, tiny_spec)
            assert_array_equal(flipped_mask, mask)
            expected = before.copy()
            for a, f in ((0, flip_x), (1, flip_y)):
                if f:
                    expected[:, a] = dims[a] - 1 - before[:, a]
            assert_array_equal(after, expected)

    def test_random_flip_is_reproducible(self, tiny_scene, tiny_spec):
        a, _ = random_flip(tiny_scene.points, [], tiny_spec, 11)
        b, _ = random_flip(tiny_scene.points, [], tiny_spec, 11)
        assert_array_equal(a.positions, b.positions)
