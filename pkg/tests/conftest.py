import numpy as np
import pytest

from sscrs.core.config import RunConfig
from sscrs.core.dataset import write_manifest, write_scene
from sscrs.core.formats import get_remap
from sscrs.core.gradcheck import TINY_DIMS, TINY_NUM_CLASSES, toy_model_config, toy_scene
from sscrs.core.grid import VoxelGridSpec


@pytest.fixture
def rng():
    """Fresh generator per test."""
    return np.random.default_rng(7)


@pytest.fixture
def tiny_spec():
    """8x8x4 grid centered on the sensor in y."""
    return VoxelGridSpec((0.0, -0.8, -0.4), 0.2, TINY_DIMS)


@pytest.fixture
def tiny_scene(tiny_spec):
    """Synthetic scene on the tiny grid, classes folded onto 1..3."""
    return toy_scene(tiny_spec, seed=3)


@pytest.fixture
def tiny_config(tiny_spec):
    """Run configuration with the narrow channel plan on the tiny grid."""
    config = RunConfig()
    config.grid.use_spec(tiny_spec)
    for name in config.model.option_names():
        config.model.set_value(name, toy_model_config().get(name))
    config.model.set_value("num_classes", TINY_NUM_CLASSES)
    config.train.set_value("batch_size", 1)
    config.train.set_value("epochs", 1)
    return config


@pytest.fixture
def dataset_dir(tmp_path, tiny_spec, tiny_scene):
    """Three flipped copies of the tiny scene in the dataset layout."""
    directory = tmp_path / "data"
    remap = get_remap("synthetic")
    ids = []
    for i in range(3):
        scene = tiny_scene.flipped(tiny_spec, i)
        scene.id = "%06d" % i
        write_scene(scene, str(directory), remap)
        ids.append(scene.id)
    write_manifest(str(directory), ids, tiny_spec, "synthetic")
    return str(directory)
