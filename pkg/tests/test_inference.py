import numpy as np
import pytest

from sscrs.core.checkpoint import checkpoint_write
from sscrs.core.container import MetricsReport
from sscrs.core.dataset import SceneDataset
from sscrs.core.errors import DataError, UsageError
from sscrs.core.grid import LabelGrid, PointCloud
from sscrs.core.inference import Evaluator, evaluate_predictions, load_model, predict_points, run_config_for
from sscrs.core.io import RUN_CONFIG_NAME, save_config
from sscrs.core.network import SSCRSModel


@pytest.fixture
def model_19(tiny_config, tiny_spec):
    tiny_config.set("model.num_classes", 19)
    return SSCRSModel(tiny_config.model, tiny_spec)


class TestPrediction:
    """Single point clouds and checkpoints."""

    def test_predict_points(self, model_19, tiny_scene):
        pred = predict_points(model_19, tiny_scene.points)
        assert pred.dims == (8, 8, 4)
        assert pred.labels.max() <= 19
        assert not pred.invalid.any()

    def test_points_outside_grid_are_ignored(self, model_19, tiny_scene):
        extra = PointCloud(np.concatenate([tiny_scene.points.positions, [[50.0, 0.0, 0.0]]]))
        assert predict_points(model_19, extra).dims == (8, 8, 4)

    def test_load_model_uses_run_config(self, tmp_path, tiny_config, model_19):
        ckpt = str(tmp_path / "last.sscr")
        checkpoint_write(ckpt, model_19.params)
        save_config(tiny_config, str(tmp_path / RUN_CONFIG_NAME))
        assert run_config_for(ckpt).get("model.num_classes") == 19
        model, config = load_model(ckpt)
        assert model.num_classes == 19
        assert config.grid_spec() == model_19.spec

    def test_load_model_mismatch(self, tmp_path, tiny_config, model_19):
        ckpt = str(tmp_path / "last.sscr")
        checkpoint_write(ckpt, model_19.params)
        tiny_config.set("model.num_classes", 5)
        with pytest.raises(DataError):
            load_model(ckpt, tiny_config)


class TestEvaluator:
    """Dataset metrics."""

    def test_report(self, model_19, dataset_dir, tiny_spec):
        report = Evaluator(model_19, batch_size=2).evaluate(SceneDataset(dataset_dir, tiny_spec))
        for name in ["iou", "miou", "precision", "recall", "num_scenes", "params.total", "iou.car", "iou.pole"]:
            assert report.has(name), name
        assert report.get("num_scenes") == 3
        assert not report.has("wall_time")
        assert 0.0 <= report.get("iou") <= 1.0
        assert report.get("params.total") == model_19.parameter_counts()["total"]

    def test_batch_size_does_not_matter(self, model_19, dataset_dir, tiny_spec):
        dataset = SceneDataset(dataset_dir, tiny_spec)
        a = Evaluator(model_19, batch_size=1).evaluate(dataset)
        b = Evaluator(model_19, batch_size=3).evaluate(dataset)
        assert a.get("num_scenes") == b.get("num_scenes")
        assert a.get("iou") == pytest.approx(b.get("iou"), abs=0.02)
        assert a.get("miou") == pytest.approx(b.get("miou"), abs=0.02)

    def test_wall_time(self, model_19, dataset_dir, tiny_spec):
        report = Evaluator(model_19, wall_time=True).evaluate(SceneDataset(dataset_dir, tiny_spec))
        assert report.get("wall_time") >= 0.0

    def test_remap_mismatch(self, tiny_config, tiny_spec, dataset_dir):
        model = SSCRSModel(tiny_config.model, tiny_spec)
        with pytest.raises(UsageError):
            Evaluator(model).evaluate(SceneDataset(dataset_dir, tiny_spec))

    def test_bad_batch_size(self, model_19):
        with pytest.raises(UsageError):
            Evaluator(model_19, batch_size=0)


class TestReports:
    """Precomputed predictions and the text format."""

    def test_evaluate_predictions(self):
        gt = LabelGrid(np.array([1, 1, 0, 2], dtype=np.uint8).reshape((4, 1, 1)))
        pred = LabelGrid(np.array([1, 0, 0, 2], dtype=np.uint8).reshape((4, 1, 1)))
        report = evaluate_predictions([pred, gt], [gt, gt], num_classes=2, class_names=["empty", "a", "b"],
                                      num_threads=2)
        assert report.get("num_scenes") == 2
        assert report.get("iou.a") == pytest.approx(3.0 / 4.0)
        assert report.get("iou.b") == pytest.approx(1.0)
        assert report.get("recall") == pytest.approx(5.0 / 6.0)

    def test_text_round_trip(self, tmp_path):
        report = MetricsReport()
        report.set("iou", 0.25)
        report.set("num_scenes", 4)
        assert not report.set("unknown", 1.0)
        path = str(tmp_path / "metrics.txt")
        report.save(path)
        with open(path) as f:
            assert f.read() == "iou = 0.25000000\nnum_scenes = 4\n"
        back = MetricsReport.load(path)
        assert back.get("iou") == 0.25
        assert back.get("num_scenes") == 4
