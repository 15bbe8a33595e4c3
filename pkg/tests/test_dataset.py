import json
import os

import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sscrs.core.dataset import MANIFEST, Batch, SceneDataset, read_manifest, read_scene, write_scene
from sscrs.core.errors import DataError
from sscrs.core.formats import get_remap
from sscrs.core.grid import VoxelGridSpec


class TestSceneFiles:
    """Directory layout of a scene."""

    def test_write_and_read(self, tmp_path, tiny_spec, tiny_scene):
        write_scene(tiny_scene, str(tmp_path), get_remap("synthetic"))
        assert os.path.isfile(str(tmp_path / "velodyne" / (tiny_scene.id + ".bin")))
        assert os.path.isfile(str(tmp_path / "voxels" / (tiny_scene.id + ".invalid")))
        back = read_scene(str(tmp_path), tiny_scene.id, tiny_spec, get_remap("synthetic"))
        assert_allclose(back.points.positions, tiny_scene.points.positions)
        assert_array_equal(back.input_occupancy, tiny_scene.input_occupancy)
        assert_array_equal(back.gt.labels, tiny_scene.gt.labels)

    def test_flip_is_reproducible(self, tiny_spec, tiny_scene):
        a = tiny_scene.flipped(tiny_spec, 11)
        b = tiny_scene.flipped(tiny_spec, 11)
        assert_array_equal(a.gt.labels, b.gt.labels)
        assert a.gt.occupancy.sum() == tiny_scene.gt.occupancy.sum()
        assert len(a.points) == len(tiny_scene.points)


class TestManifest:
    """Dataset description."""

    def test_missing(self, tmp_path):
        with pytest.raises(DataError, match=MANIFEST):
            read_manifest(str(tmp_path))

    def test_malformed(self, tmp_path):
        (tmp_path / MANIFEST).write_text("{not json")
        with pytest.raises(DataError):
            read_manifest(str(tmp_path))

    def test_missing_key(self, tmp_path):
        (tmp_path / MANIFEST).write_text(json.dumps({"version": 1, "grid": {}}))
        with pytest.raises(DataError, match="remap"):
            read_manifest(str(tmp_path))

    def test_wrong_version(self, dataset_dir):
        path = os.path.join(dataset_dir, MANIFEST)
        with open(path) as f:
            d = json.load(f)
        d["version"] = 99
        with open(path, "w") as f:
            json.dump(d, f)
        with pytest.raises(DataError):
            read_manifest(dataset_dir)


class TestSceneDataset:
    """Loading and batching."""

    def test_loads_in_manifest_order(self, dataset_dir, tiny_spec):
        dataset = SceneDataset(dataset_dir, tiny_spec, num_threads=2)
        assert len(dataset) == 3
        assert [s.id for s in dataset.load_all()] == ["000000", "000001", "000002"]
        assert [len(b) for b in dataset.batches(2)] == [2, 1]

    def test_grid_mismatch(self, dataset_dir):
        other = VoxelGridSpec((0.0, -0.8, -0.4), 0.25, (8, 8, 4))
        with pytest.raises(DataError, match="differs"):
            SceneDataset(dataset_dir, other)

    def test_accepts_manifest_grid(self, dataset_dir, tiny_spec):
        assert SceneDataset(dataset_dir).spec == tiny_spec

    def test_missing_scene_file(self, dataset_dir, tiny_spec):
        os.remove(os.path.join(dataset_dir, "voxels", "000001.label"))
        dataset = SceneDataset(dataset_dir, tiny_spec)
        with pytest.raises(DataError):
            dataset.load_all()


def test_collate(tiny_scene):
    batch = Batch.collate([tiny_scene, tiny_scene])
    assert batch.occupancy.shape == (2, 8, 8, 4)
    assert batch.occupancy.dtype == bool
    assert batch.targets.labels[0].shape == (2, 8, 8, 4)
    assert batch.ids == [tiny_scene.id, tiny_scene.id]
    with pytest.raises(DataError):
        Batch.collate([])
