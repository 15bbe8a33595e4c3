import numpy as np
import pytest
from numpy.testing import assert_array_equal

from sscrs.core.config import SynthConfig
from sscrs.core.grid import VoxelGridSpec, voxelize
from sscrs.core.synth import (SYNTHETIC_CLASSES, beam_directions, generate_synthetic_scene, scene_id,
                              sensor_position)


@pytest.fixture
def synth_config():
    config = SynthConfig()
    config.set_value("sensor_height", 0.3)
    config.set_value("num_beams", 16)
    config.set_value("azimuth_step", 2.0)
    return config


@pytest.fixture
def spec():
    return VoxelGridSpec((0.0, -1.6, -0.4), 0.2, (16, 16, 8))


class TestGenerator:
    """Procedural scenes seen by a simulated LiDAR."""

    def test_deterministic_per_seed(self, spec, synth_config):
        a = generate_synthetic_scene(5, spec, synth_config)
        b = generate_synthetic_scene(5, spec, synth_config)
        c = generate_synthetic_scene(6, spec, synth_config)
        assert a.id == "000005"
        assert_array_equal(a.points.positions, b.points.positions)
        assert_array_equal(a.gt.labels, b.gt.labels)
        assert not np.array_equal(a.gt.labels, c.gt.labels) or len(a.points) != len(c.points)

    def test_points_lie_in_occupied_voxels(self, spec, synth_config):
        scene = generate_synthetic_scene(2, spec, synth_config)
        assert len(scene.points) > 0
        indices, mask = voxelize(scene.points, spec)
        assert mask.all()
        assert np.all(scene.gt.labels[indices[:, 0], indices[:, 1], indices[:, 2]] > 0)

    def test_footprint_within_ground_truth(self, spec, synth_config):
        scene = generate_synthetic_scene(3, spec, synth_config)
        assert scene.input_occupancy.any()
        assert not np.any(scene.input_occupancy & ~scene.gt.occupancy)
        # a single scan leaves parts of the scene unseen
        assert scene.input_occupancy.sum() < scene.gt.occupancy.sum()

    def test_classes(self, spec, synth_config):
        for seed in range(4):
            labels = generate_synthetic_scene(seed, spec, synth_config).gt.labels
            assert set(np.unique(labels)) <= set([0] + SYNTHETIC_CLASSES)
            assert np.all(labels[:, :, 0] == SYNTHETIC_CLASSES[0])

    def test_flat_grid_is_ground_only(self, synth_config):
        flat = VoxelGridSpec((0.0, -1.6, -0.2), 0.2, (16, 16, 1))
        synth_config.set_value("sensor_origin", [0.0, 0.0, 0.5])
        scene = generate_synthetic_scene(1, flat, synth_config)
        assert np.all(scene.gt.labels == SYNTHETIC_CLASSES[0])


class TestSettings:
    """Sensor placement and beam pattern."""

    def test_default_sensor_position(self, spec, synth_config):
        assert np.allclose(sensor_position(spec, synth_config), [0.0, 0.0, -0.4 + 0.2 + 0.3])

    def test_explicit_sensor_position(self, spec, synth_config):
        synth_config.set_value("sensor_origin", [1.0, 2.0, 3.0])
        assert np.allclose(sensor_position(spec, synth_config), [1.0, 2.0, 3.0])
        synth_config.set_value("sensor_origin", [1.0, 2.0])
        with pytest.raises(ValueError):
            sensor_position(spec, synth_config)

    def test_beam_directions(self, synth_config):
        d = beam_directions(synth_config)
        assert d.shape == (16 * 91, 3)
        assert np.allclose(np.linalg.norm(d, axis=1), 1.0)

    def test_bad_jitter(self, spec, synth_config):
        synth_config.set_value("jitter", 0.5)
        with pytest.raises(ValueError):
            generate_synthetic_scene(1, spec, synth_config)

    def test_scene_id(self):
        assert scene_id(42) == "000042"
