import os

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from sscrs.core.checkpoint import checkpoint_read, split_checkpoint
from sscrs.core.config import RunConfig
from sscrs.core.dataset import SceneDataset
from sscrs.core.errors import DataError, UsageError
from sscrs.core.grid import VoxelGridSpec
from sscrs.core.inference import predict_batch
from sscrs.core.io import RUN_CONFIG_NAME, load_config
from sscrs.core.losses import LOG_COLUMNS
from sscrs.core.metrics import MIOU_PRESENT, evaluate_all
from sscrs.core.synth import generate_synthetic_scene
from sscrs.core.train import EPOCH_KEY, LAST_CHECKPOINT, LOG_NAME, Trainer, epoch_checkpoint_name, train


@pytest.fixture
def train_config(tiny_config):
    # the synthetic remap table knows all 19 classes
    tiny_config.set("model.num_classes", 19)
    tiny_config.set("train.epochs", 2)
    tiny_config.set("train.batch_size", 2)
    return tiny_config


def read_log(output_dir):
    with open(os.path.join(output_dir, LOG_NAME)) as f:
        lines = f.read().splitlines()
    return lines[0], [line.split() for line in lines[1:]]


class TestTrainer:
    """Optimization loop, loss log and checkpoints."""

    def test_log_and_checkpoints(self, tmp_path, train_config, dataset_dir):
        out = str(tmp_path / "run")
        trainer = train(train_config, dataset_dir, out)
        header, rows = read_log(out)
        assert header.split() == LOG_COLUMNS
        # 3 scenes in batches of 2, two epochs
        assert [(int(r[0]), int(r[1])) for r in rows] == [(0, 1), (0, 2), (1, 3), (1, 4)]
        for r in rows:
            values = [float(v) for v in r[2:]]
            assert all(np.isfinite(values))
            l_total, l_bev, l_s, l_c = values[:4]
            assert l_total == pytest.approx(3.0 * l_bev + l_s + l_c, abs=1e-6)
            assert l_s == pytest.approx(sum(values[4:7]), abs=1e-6)
        for name in [epoch_checkpoint_name(1), epoch_checkpoint_name(2), LAST_CHECKPOINT, RUN_CONFIG_NAME]:
            assert os.path.isfile(os.path.join(out, name))
        assert load_config(os.path.join(out, RUN_CONFIG_NAME)).to_flat() == train_config.to_flat()
        assert trainer.epoch == 2
        assert len(trainer.history) == 4

    def test_checkpoint_content(self, tmp_path, train_config, dataset_dir):
        out = str(tmp_path / "run")
        trainer = train(train_config, dataset_dir, out)
        tensors = checkpoint_read(os.path.join(out, LAST_CHECKPOINT))
        params, optim = split_checkpoint(tensors)
        assert sorted(params.keys()) == trainer.model.params.keys()
        assert optim.step == 4
        assert int(tensors[EPOCH_KEY][0]) == 2

    def test_max_steps(self, tmp_path, train_config, dataset_dir):
        train_config.set("train.max_steps", 3)
        train_config.set("train.epochs", 5)
        out = str(tmp_path / "run")
        trainer = train(train_config, dataset_dir, out)
        _, rows = read_log(out)
        assert len(rows) == 3
        assert trainer.optimizer.state.step == 3
        assert not os.path.exists(os.path.join(out, epoch_checkpoint_name(3)))

    def test_deterministic(self, tmp_path, train_config, dataset_dir):
        train_config.set("train.flip", True)
        train(train_config, dataset_dir, str(tmp_path / "a"))
        train(train_config, dataset_dir, str(tmp_path / "b"))
        assert read_log(str(tmp_path / "a")) == read_log(str(tmp_path / "b"))
        a = checkpoint_read(str(tmp_path / "a" / LAST_CHECKPOINT))
        b = checkpoint_read(str(tmp_path / "b" / LAST_CHECKPOINT))
        for name in a:
            assert_array_equal(a[name], b[name])

    def test_resume(self, tmp_path, train_config, dataset_dir):
        train_config.set("train.epochs", 1)
        out = str(tmp_path / "run")
        train(train_config, dataset_dir, out)
        train_config.set("train.epochs", 2)
        trainer = train(train_config, dataset_dir, out, resume=os.path.join(out, LAST_CHECKPOINT))
        assert trainer.epoch == 2
        assert trainer.optimizer.state.step == 4
        _, rows = read_log(out)
        assert [int(r[1]) for r in rows] == [1, 2, 3, 4]

    def test_resume_into_other_model(self, tmp_path, train_config, dataset_dir):
        out = str(tmp_path / "run")
        train_config.set("train.epochs", 1)
        train(train_config, dataset_dir, out)
        train_config.set("model.use_arf", False)
        trainer = Trainer(train_config, str(tmp_path / "other"))
        with pytest.raises(DataError):
            trainer.resume(os.path.join(out, LAST_CHECKPOINT))

    def test_class_count_mismatch(self, tmp_path, tiny_config, dataset_dir, tiny_spec):
        trainer = Trainer(tiny_config, str(tmp_path / "run"))
        with pytest.raises(UsageError):
            trainer.train(SceneDataset(dataset_dir, tiny_spec))

    def test_stop_execution(self, tmp_path, train_config, dataset_dir, tiny_spec):
        trainer = Trainer(train_config, str(tmp_path / "run"))
        trainer.stop_execution()
        assert trainer.is_stopped
        # a new run resets the flag
        trainer.train(SceneDataset(dataset_dir, tiny_spec))
        assert trainer.epoch == 2


@pytest.mark.slow
def test_overfits_single_scene(tmp_path, train_config, dataset_dir, tiny_spec):
    """Repeated steps on one scene drive the loss down."""
    train_config.set("train.flip", False)
    train_config.set("train.lr", 0.01)
    trainer = Trainer(train_config, str(tmp_path / "run"))
    sample = SceneDataset(dataset_dir, tiny_spec).load_all()[:1]
    losses = [trainer.step(sample).l_total for _ in range(30)]
    assert min(losses[-5:]) < losses[0]


def desk_config():
    config = RunConfig()
    config.grid.use_spec(VoxelGridSpec.desk())
    config.train.set_value("flip", False)
    return config


def fit(config, samples, max_steps, output_dir, until=None):
    """Steps through the samples one at a time, stops early once until(model) holds (checked every 50 steps)."""
    trainer = Trainer(config, output_dir)
    for i in range(max_steps):
        trainer.step([samples[i % len(samples)]])
        if until is not None and (i + 1) % 50 == 0 and until(trainer.model):
            break
    return trainer.model


def scene_metrics(model, samples, num_classes=19):
    preds = predict_batch(model, samples)
    return evaluate_all(preds, [s.gt for s in samples], num_classes=num_classes, mode=MIOU_PRESENT)


@pytest.mark.slow
def test_desk_scale_overfit_reaches_iou(tmp_path):
    """One synthetic scene, default channel plan, at most 500 steps at lr 0.001."""
    config = desk_config()
    assert config.train.get("lr") == 0.001
    samples = [generate_synthetic_scene(1, config.grid_spec(), config.synth)]

    def reached(model):
        m = scene_metrics(model, samples)
        return m["iou"] >= 0.95 and m["miou"] >= 0.90

    model = fit(config, samples, 500, str(tmp_path / "run"), until=reached)
    result = scene_metrics(model, samples)
    assert result["iou"] >= 0.95
    assert result["miou"] >= 0.90


@pytest.mark.slow
def test_empty_room_predicts_empty(tmp_path):
    config = desk_config()
    config.synth.set_value("min_boxes", 0)
    config.synth.set_value("max_boxes", 0)
    config.synth.set_value("max_poles", 0)
    sample = generate_synthetic_scene(2, config.grid_spec(), config.synth)
    # ground layer only
    assert not sample.gt.labels[:, :, 1:].any()
    model = fit(config, [sample], 300, str(tmp_path / "run"))
    pred = predict_batch(model, [sample])[0].labels
    free = sample.gt.labels == 0
    assert np.mean(pred[free] == 0) >= 0.99


@pytest.mark.slow
@pytest.mark.parametrize("key", ["model.use_semantic_branch", "loss.multi_scale_supervision"])
def test_ablation_does_not_raise_miou(tmp_path, key):
    """Same scenes, steps and seeds, with and without the component."""
    spec = VoxelGridSpec.desk()
    samples = [generate_synthetic_scene(100 + i, spec) for i in range(8)]
    results = []
    for enabled in [True, False]:
        config = desk_config()
        config.set(key, enabled)
        model = fit(config, samples, 200, str(tmp_path / ("run_%s" % enabled)))
        results.append(scene_metrics(model, samples)["miou"])
    assert results[1] <= results[0]
