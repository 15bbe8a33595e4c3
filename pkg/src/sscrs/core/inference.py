import os
import time
from typing import List, Optional, Tuple

import numpy as np
from coed.logging import LoggableObject

from .checkpoint import load_into
from .config import RunConfig
from .container import (MetricsReport, METRIC_IOU, METRIC_MIOU, METRIC_NUM_SCENES, METRIC_PRECISION,
                        METRIC_RECALL, METRIC_WALL_TIME, PREFIX_CLASS_IOU, PREFIX_PARAMS)
from .dataset import SceneDataset, SceneSample, footprint
from .errors import UsageError
from .grid import LabelGrid, PointCloud
from .io import RUN_CONFIG_NAME, load_config
from .metrics import ConfusionMatrix, MIOU_ALL, class_names_for, summarize
from .network import SSCRSModel, ssc_rs_forward
from .performance import ordered_map
from .stopping import Stoppable
from .tensor import no_grad


def run_config_for(checkpoint: str) -> RunConfig:
    """
    Returns the configuration stored next to the checkpoint by the trainer, defaults otherwise.

    :param checkpoint: the checkpoint file
    :type checkpoint: str
    :return: the configuration
    :rtype: RunConfig
    """
    path = os.path.join(os.path.dirname(os.path.abspath(checkpoint)), RUN_CONFIG_NAME)
    if os.path.isfile(path):
        return load_config(path)
    return RunConfig()


def load_model(checkpoint: str, config: RunConfig = None) -> Tuple[SSCRSModel, RunConfig]:
    """
    Rebuilds the model the checkpoint was trained with and loads its parameters.

    :param checkpoint: the checkpoint file
    :type checkpoint: str
    :param config: the configuration to use, the one next to the checkpoint if None
    :type config: RunConfig
    :return: the model and the configuration
    :rtype: tuple
    """
    if config is None:
        config = run_config_for(checkpoint)
    model = SSCRSModel(config.model, config.grid_spec())
    load_into(checkpoint, model.params)
    return model, config


def predict_batch(model: SSCRSModel, samples: List[SceneSample]) -> List[LabelGrid]:
    """
    Predicts the label grids of the scenes (argmax over the empty class and the semantic classes).

    :param model: the model
    :type model: SSCRSModel
    :param samples: the scenes
    :type samples: list
    :return: the predictions, one per scene
    :rtype: list
    """
    with no_grad():
        output = ssc_rs_forward(model, samples, training=False)
    return [LabelGrid(p) for p in output.predictions()]


def predict_points(model: SSCRSModel, points: PointCloud) -> LabelGrid:
    """
    Predicts the scene of a single point cloud; the input occupancy is its voxel footprint.

    :param model: the model
    :type model: SSCRSModel
    :param points: the point cloud
    :type points: PointCloud
    :return: the prediction
    :rtype: LabelGrid
    """
    occ = footprint(points, model.spec)
    sample = SceneSample(points, occ, LabelGrid(np.zeros(model.spec.dims, dtype=np.uint8)), "")
    return predict_batch(model, [sample])[0]


def metrics_to_report(matrix: ConfusionMatrix, mode: str, class_names: Optional[List[str]] = None) -> MetricsReport:
    """
    Turns the accumulated confusion matrix into a metrics report (one iou.<class> entry per class).

    :param matrix: the counts
    :type matrix: ConfusionMatrix
    :param mode: how to average the class IoUs
    :type mode: str
    :param class_names: the names of classes 0..C_n, optional
    :type class_names: list
    :return: the report
    :rtype: MetricsReport
    """
    summary = summarize(matrix, mode=mode)
    report = MetricsReport()
    report.set(METRIC_IOU, summary["iou"])
    report.set(METRIC_MIOU, summary["miou"])
    report.set(METRIC_PRECISION, summary["precision"])
    report.set(METRIC_RECALL, summary["recall"])
    for name, iou in zip(class_names_for(matrix.num_classes, class_names), summary["per_class_iou"]):
        report.set(PREFIX_CLASS_IOU + name, iou)
    return report


class Evaluator(LoggableObject, Stoppable):
    """
    Evaluates a model on the scenes of a dataset directory. Batches are predicted in order
    and their confusion matrices get merged.
    """

    def __init__(self, model: SSCRSModel, batch_size: int = 1, mode: str = MIOU_ALL, wall_time: bool = False):
        """
        Initializes the evaluator.

        :param model: the model to evaluate
        :type model: SSCRSModel
        :param batch_size: the number of scenes per forward pass
        :type batch_size: int
        :param mode: how to average the class IoUs
        :type mode: str
        :param wall_time: whether to include the (non-reproducible) evaluation time in the report
        :type wall_time: bool
        """
        super().__init__()
        if batch_size < 1:
            raise UsageError("Batch size must be at least 1, got: %d" % batch_size)
        self.model = model
        self.batch_size = batch_size
        self.mode = mode
        self.wall_time = wall_time
        self._stopped = False

    def _matrix(self, samples: List[SceneSample]) -> ConfusionMatrix:
        matrix = ConfusionMatrix(self.model.num_classes)
        for pred, sample in zip(predict_batch(self.model, samples), samples):
            matrix.update(pred, sample.gt)
        return matrix

    def evaluate(self, dataset: SceneDataset) -> MetricsReport:
        """
        Evaluates the dataset.

        :param dataset: the scenes
        :type dataset: SceneDataset
        :return: the report
        :rtype: MetricsReport
        """
        if dataset.remap.num_classes != self.model.num_classes:
            raise UsageError("Dataset remap '%s' has %d classes, model has %d"
                             % (dataset.remap.name, dataset.remap.num_classes, self.model.num_classes))
        self._stopped = False
        start = time.time()
        matrix = ConfusionMatrix(self.model.num_classes)
        num_scenes = 0
        for batch in dataset.batches(self.batch_size):
            if self._stopped:
                break
            matrix.merge(self._matrix(batch))
            num_scenes += len(batch)
        report = metrics_to_report(matrix, self.mode, dataset.remap.class_names)
        report.set(METRIC_NUM_SCENES, num_scenes)
        for part, count in self.model.parameter_counts().items():
            report.set(PREFIX_PARAMS + part, count)
        if self.wall_time:
            report.set(METRIC_WALL_TIME, time.time() - start)
        self.log("Evaluated %d scenes: iou=%.4f miou=%.4f" % (num_scenes, report.get(METRIC_IOU), report.get(METRIC_MIOU)))
        return report

    def stop_execution(self):
        self._stopped = True

    @property
    def is_stopped(self) -> bool:
        return self._stopped


def evaluate_predictions(preds: List[LabelGrid], gts: List[LabelGrid], num_classes: int, mode: str = MIOU_ALL,
                         class_names: Optional[List[str]] = None, num_threads: int = 1) -> MetricsReport:
    """
    Evaluates already available predictions, sharding the scenes across worker threads.

    :param preds: the predictions
    :type preds: list
    :param gts: the ground truth grids
    :type gts: list
    :param num_classes: the number of semantic classes C_n
    :type num_classes: int
    :param mode: how to average the class IoUs
    :type mode: str
    :param class_names: the names of classes 0..C_n, optional
    :type class_names: list
    :param num_threads: the number of workers
    :type num_threads: int
    :return: the report
    :rtype: MetricsReport
    """
    if len(preds) != len(gts):
        raise ValueError("Got %d predictions for %d ground truth grids" % (len(preds), len(gts)))
    matrices = ordered_map(lambda pg: ConfusionMatrix(num_classes).update(pg[0], pg[1]),
                           list(zip(preds, gts)), num_threads=num_threads)
    matrix = ConfusionMatrix(num_classes)
    for m in matrices:
        matrix.merge(m)
    report = metrics_to_report(matrix, mode, class_names)
    report.set(METRIC_NUM_SCENES, len(preds))
    return report
