from typing import Dict, List, Optional, Sequence

import numpy as np

from .grid import LabelGrid

MIOU_ALL = "all"
MIOU_PRESENT = "present"

MIOU_MODES = [
    MIOU_ALL,
    MIOU_PRESENT,
]


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den > 0 else 0.0


class ConfusionMatrix:
    """
    (C_n+1) x (C_n+1) counts, rows = ground truth, columns = prediction. Class 0 is empty.
    Matrices of several scenes can be merged by adding them.
    """

    def __init__(self, num_classes: int):
        """
        Initializes the matrix.

        :param num_classes: the number of semantic classes C_n (empty excluded)
        :type num_classes: int
        """
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes + 1, num_classes + 1), dtype=np.int64)

    def update(self, pred: LabelGrid, gt: LabelGrid) -> 'ConfusionMatrix':
        """
        Adds the valid voxels (not invalid in the ground truth) of the scene.

        :param pred: the prediction
        :type pred: LabelGrid
        :param gt: the ground truth
        :type gt: LabelGrid
        :return: itself
        :rtype: ConfusionMatrix
        """
        if pred.dims != gt.dims:
            raise ValueError("Prediction shape %s differs from ground truth shape %s" % (str(pred.dims), str(gt.dims)))
        valid = ~gt.invalid
        g = gt.labels[valid].astype(np.int64)
        p = pred.labels[valid].astype(np.int64)
        k = self.num_classes + 1
        if (len(g) > 0) and (g.max() >= k or p.max() >= k):
            raise ValueError("Class ids must be in 0..%d" % self.num_classes)
        self.counts += np.bincount(g * k + p, minlength=k * k).reshape((k, k))
        return self

    def merge(self, other: 'ConfusionMatrix') -> 'ConfusionMatrix':
        if other.num_classes != self.num_classes:
            raise ValueError("Cannot merge matrices for %d and %d classes" % (self.num_classes, other.num_classes))
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tp(self, c: int) -> int:
        return int(self.counts[c, c])

    def fp(self, c: int) -> int:
        return int(self.counts[:, c].sum() - self.counts[c, c])

    def fn(self, c: int) -> int:
        return int(self.counts[c, :].sum() - self.counts[c, c])

    def class_iou(self, c: int) -> float:
        return _ratio(self.tp(c), self.tp(c) + self.fp(c) + self.fn(c))

    def is_present(self, c: int) -> bool:
        """
        Whether the class occurs in ground truth or prediction.
        """
        return self.counts[c, :].sum() + self.counts[:, c].sum() > 0

    def occupancy_counts(self):
        """
        Returns TP, FP, FN of occupied (class > 0) vs empty.

        :return: the counts
        :rtype: tuple
        """
        tp = int(self.counts[1:, 1:].sum())
        fp = int(self.counts[0, 1:].sum())
        fn = int(self.counts[1:, 0].sum())
        return tp, fp, fn

    def miou(self, mode: str = MIOU_ALL) -> float:
        """
        Mean IoU over the semantic classes 1..C_n.

        :param mode: 'all' (absent classes count as 0) or 'present' (only classes in GT or prediction)
        :type mode: str
        :return: the mean
        :rtype: float
        """
        if mode not in MIOU_MODES:
            raise ValueError("Unknown mIoU mode: %s" % mode)
        classes = list(range(1, self.num_classes + 1))
        if mode == MIOU_PRESENT:
            classes = [c for c in classes if self.is_present(c)]
        if len(classes) == 0:
            return 0.0
        return float(np.mean([self.class_iou(c) for c in classes]))


def evaluate(pred: LabelGrid, gt: LabelGrid, num_classes: int = 19, mode: str = MIOU_ALL,
             matrix: ConfusionMatrix = None) -> Dict[str, object]:
    """
    Computes completion IoU, precision, recall and the semantic (m)IoU on the valid voxels.

    :param pred: the prediction
    :type pred: LabelGrid
    :param gt: the ground truth
    :type gt: LabelGrid
    :param num_classes: the number of semantic classes C_n
    :type num_classes: int
    :param mode: see MIOU_MODES
    :type mode: str
    :param matrix: the matrix to accumulate into, optional
    :type matrix: ConfusionMatrix
    :return: iou, miou, per_class_iou (list for 1..C_n), precision, recall
    :rtype: dict
    """
    if matrix is None:
        matrix = ConfusionMatrix(num_classes)
    matrix.update(pred, gt)
    return summarize(matrix, mode=mode)


def summarize(matrix: ConfusionMatrix, mode: str = MIOU_ALL) -> Dict[str, object]:
    """
    Turns the (accumulated) confusion matrix into the metrics.

    :param matrix: the counts
    :type matrix: ConfusionMatrix
    :param mode: see MIOU_MODES
    :type mode: str
    :return: iou, miou, per_class_iou (list for 1..C_n), precision, recall
    :rtype: dict
    """
    tp, fp, fn = matrix.occupancy_counts()
    return {
        "iou": _ratio(tp, tp + fp + fn),
        "miou": matrix.miou(mode),
        "per_class_iou": [matrix.class_iou(c) for c in range(1, matrix.num_classes + 1)],
        "precision": _ratio(tp, tp + fp),
        "recall": _ratio(tp, tp + fn),
    }


def evaluate_all(preds: Sequence[LabelGrid], gts: Sequence[LabelGrid], num_classes: int = 19,
                 mode: str = MIOU_ALL) -> Dict[str, object]:
    """
    Evaluates the scenes jointly (one confusion matrix accumulated over all of them).
    """
    if len(preds) != len(gts):
        raise ValueError("Got %d predictions for %d ground truth grids" % (len(preds), len(gts)))
    matrix = ConfusionMatrix(num_classes)
    for p, g in zip(preds, gts):
        matrix.update(p, g)
    return summarize(matrix, mode=mode)


def class_names_for(num_classes: int, names: Optional[List[str]] = None) -> List[str]:
    """
    Returns the names of classes 1..C_n, falling back to 'class<i>'.
    """
    if names is not None and len(names) >= num_classes + 1:
        return list(names[1:num_classes + 1])
    return ["class%d" % c for c in range(1, num_classes + 1)]
