from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .functional import log_softmax, sigmoid, softmax
from .grid import LabelGrid, downsample_invalid, downsample_labels, downsample_occupancy
from .sparse import SparseVoxelTensor
from .tensor import Tensor, as_tensor, concat, make_result, scalar_mul

NORMALIZATION_TOLERANCE = 1e-4

LOG_COLUMNS = ["epoch", "step", "l_total", "l_bev", "l_s", "l_c", "l_s1", "l_s2", "l_s3", "l_c1", "l_c2", "l_c3"]


def zero_loss(like: Tensor) -> Tensor:
    """
    Returns a zero scalar that is connected to the tensor (zero gradient).
    """
    return scalar_mul(like.sum(), 0.0)


def _selection(n: int, ignore: Optional[np.ndarray]) -> np.ndarray:
    if ignore is None:
        return np.arange(n)
    ignore = np.asarray(ignore, dtype=bool).reshape((-1,))
    if len(ignore) != n:
        raise ValueError("Ignore mask has %d entries, expected %d" % (len(ignore), n))
    return np.nonzero(~ignore)[0]


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore: np.ndarray = None) -> Tensor:
    """
    Mean negative log-likelihood of the targets over the rows that are not ignored.

    :param logits: the M x K logits
    :type logits: Tensor
    :param targets: the M class ids
    :type targets: np.ndarray
    :param ignore: the M flags of rows to ignore, optional
    :type ignore: np.ndarray
    :return: the scalar loss (0 if all rows are ignored)
    :rtype: Tensor
    """
    targets = np.asarray(targets, dtype=np.int64).reshape((-1,))
    if logits.ndim != 2 or len(targets) != logits.shape[0]:
        raise ValueError("cross_entropy: %s logits vs %d targets" % (str(logits.shape), len(targets)))
    rows = _selection(len(targets), ignore)
    if len(rows) == 0:
        return zero_loss(logits)
    t = targets[rows]
    if np.any(t < 0) or np.any(t >= logits.shape[1]):
        raise ValueError("Target class outside of 0..%d" % (logits.shape[1] - 1))
    ls = log_softmax(logits[rows], axis=1)
    return -(ls[(np.arange(len(rows)), t)].mean())


def bce_with_logits(logits: Tensor, targets: np.ndarray, ignore: np.ndarray = None) -> Tensor:
    """
    Mean binary cross-entropy, evaluated as max(z, 0) - z*t + log(1 + exp(-|z|)).

    :param logits: the M logits
    :type logits: Tensor
    :param targets: the M binary targets
    :type targets: np.ndarray
    :param ignore: the M flags of entries to ignore, optional
    :type ignore: np.ndarray
    :return: the scalar loss (0 if everything is ignored)
    :rtype: Tensor
    """
    flat = logits.reshape(-1)
    t_all = np.asarray(targets, dtype=np.float64).reshape((-1,))
    if len(t_all) != flat.shape[0]:
        raise ValueError("bce_with_logits: %d logits vs %d targets" % (flat.shape[0], len(t_all)))
    rows = _selection(len(t_all), ignore)
    if len(rows) == 0:
        return zero_loss(logits)
    z_t = flat[rows]
    z = z_t.data
    t = t_all[rows].astype(z.dtype)
    n = len(rows)
    values = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    prob = 0.5 * (1.0 + np.tanh(0.5 * z))

    def _backward(g):
        return [(g * (prob - t) / n).astype(z.dtype)]

    return make_result("bce_with_logits", np.asarray(values.mean(), dtype=z.dtype), [z_t], _backward)


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """
    Gradient of the Lovász extension of the Jaccard loss w.r.t. the sorted errors.

    :param gt_sorted: the foreground indicators, sorted by descending error
    :type gt_sorted: np.ndarray
    :return: the coefficients
    :rtype: np.ndarray
    """
    gt_sorted = np.asarray(gt_sorted, dtype=np.float64)
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    if len(gt_sorted) > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax(probs: Tensor, targets: np.ndarray, ignore: np.ndarray = None) -> Tensor:
    """
    Lovász-softmax loss, averaged over the classes present in the (non-ignored) targets.

    :param probs: the M x K class probabilities (rows sum to 1)
    :type probs: Tensor
    :param targets: the M class ids
    :type targets: np.ndarray
    :param ignore: the M flags of rows to ignore, optional
    :type ignore: np.ndarray
    :return: the scalar loss (0 if all rows are ignored)
    :rtype: Tensor
    """
    targets = np.asarray(targets, dtype=np.int64).reshape((-1,))
    if probs.ndim != 2 or len(targets) != probs.shape[0]:
        raise ValueError("lovasz_softmax: %s probabilities vs %d targets" % (str(probs.shape), len(targets)))
    if probs.size > 0 and np.max(np.abs(probs.data.sum(axis=1) - 1.0)) > NORMALIZATION_TOLERANCE:
        raise ValueError("lovasz_softmax: probabilities not normalized (tolerance %g)" % NORMALIZATION_TOLERANCE)
    rows = _selection(len(targets), ignore)
    if len(rows) == 0:
        return zero_loss(probs)
    p_t = probs[rows]
    p = p_t.data.astype(np.float64)
    t = targets[rows]
    classes = np.unique(t)
    total = 0.0
    coeffs = np.zeros_like(p)
    for c in classes:
        fg = (t == c).astype(np.float64)
        errors = fg + (1.0 - 2.0 * fg) * p[:, c]
        order = np.argsort(-errors, kind="stable")
        g = lovasz_grad(fg[order])
        total += float(np.dot(errors[order], g))
        coeffs[order, c] = g * (1.0 - 2.0 * fg[order])
    n = len(classes)

    def _backward(grad):
        return [(grad * coeffs / n).astype(p_t.dtype)]

    return make_result("lovasz_softmax", np.asarray(total / n, dtype=p_t.dtype), [p_t], _backward)


@dataclass
class MultiScaleTargets:
    """
    Per scale (1, 1/2, 1/4, 1/8) the B x L_i x W_i x H_i class ids and invalid masks, plus the
    occupancy targets for the completion heads.
    """

    labels: List[np.ndarray]
    invalid: List[np.ndarray]
    occupancy: List[np.ndarray]
    occupancy_invalid: List[np.ndarray]

    @classmethod
    def from_grids(cls, grids: Sequence[LabelGrid], num_scales: int = 4) -> 'MultiScaleTargets':
        """
        Derives the coarser targets from the full resolution ground truth.

        :param grids: the ground truth per sample
        :type grids: list
        :param num_scales: the number of scales, including full resolution
        :type num_scales: int
        :return: the targets
        :rtype: MultiScaleTargets
        """
        per_sample = []
        for grid in grids:
            scales = [(grid.labels, grid.invalid, grid.occupancy, grid.invalid)]
            g = grid
            occ = grid.occupancy
            occ_invalid = grid.invalid
            for _ in range(num_scales - 1):
                g = downsample_labels(g)
                occ = downsample_occupancy(occ)
                occ_invalid = downsample_invalid(occ_invalid)
                scales.append((g.labels, g.invalid, occ, occ_invalid))
            per_sample.append(scales)
        fields = []
        for k in range(4):
            fields.append([np.stack([s[i][k] for s in per_sample]) for i in range(num_scales)])
        return cls(*fields)


@dataclass
class LossReport:
    """
    The loss components of one step.
    """

    l_bev: float = 0.0
    l_s: float = 0.0
    l_c: float = 0.0
    l_total: float = 0.0
    l_s_stages: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    l_c_stages: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def values(self) -> List[float]:
        return [self.l_total, self.l_bev, self.l_s, self.l_c] + list(self.l_s_stages) + list(self.l_c_stages)

    def to_line(self, epoch: int, step: int) -> str:
        """
        Formats the report as training log line (see LOG_COLUMNS).

        :param epoch: the epoch
        :type epoch: int
        :param step: the optimizer step
        :type step: int
        :return: the line (without newline)
        :rtype: str
        """
        return " ".join([str(epoch), str(step)] + ["%.8f" % v for v in self.values()])


def semantic_stage_loss(logits: SparseVoxelTensor, labels: np.ndarray, invalid: np.ndarray) -> Tensor:
    """
    Lovász + cross-entropy of one semantic head on the active voxels with a valid, non-empty label.

    :param logits: the C_n logits per active voxel (class k stands for label k+1)
    :type logits: SparseVoxelTensor
    :param labels: the B x L x W x H class ids of that scale
    :type labels: np.ndarray
    :param invalid: the B x L x W x H invalid mask of that scale
    :type invalid: np.ndarray
    :return: the loss
    :rtype: Tensor
    """
    c = logits.coords
    if tuple(labels.shape[1:]) != logits.spatial_shape:
        raise ValueError("Label shape %s differs from feature shape %s" % (str(labels.shape), str(logits.spatial_shape)))
    lab = labels[c[:, 0], c[:, 1], c[:, 2], c[:, 3]].astype(np.int64)
    inv = invalid[c[:, 0], c[:, 1], c[:, 2], c[:, 3]]
    num_classes = logits.num_channels
    ignore = inv | (lab < 1) | (lab > num_classes)
    targets = np.where(ignore, 0, lab - 1)
    x = logits.features
    return lovasz_softmax(softmax(x, axis=1), targets, ignore) + cross_entropy(x, targets, ignore)


def semantic_loss(sem_aux_logits: Sequence[SparseVoxelTensor], targets: MultiScaleTargets) -> Tuple[Tensor, List[Tensor]]:
    """
    Sums the losses of the semantic heads (stage i is supervised at scale 1/2^i).

    :param sem_aux_logits: the logits of the three heads
    :type sem_aux_logits: list
    :param targets: the targets
    :type targets: MultiScaleTargets
    :return: the sum, the per-stage losses
    :rtype: tuple
    """
    stages = [semantic_stage_loss(x, targets.labels[i + 1], targets.invalid[i + 1]) for i, x in enumerate(sem_aux_logits)]
    return _sum(stages), stages


def completion_stage_loss(logits: Tensor, occupancy: np.ndarray, invalid: np.ndarray) -> Tensor:
    """
    Lovász (on the empty/occupied probabilities) + binary cross-entropy of one completion head.

    :param logits: the B x 1 x L x W x H logits
    :type logits: Tensor
    :param occupancy: the B x L x W x H occupancy targets
    :type occupancy: np.ndarray
    :param invalid: the B x L x W x H invalid mask
    :type invalid: np.ndarray
    :return: the loss
    :rtype: Tensor
    """
    if logits.shape[2:] != tuple(occupancy.shape[1:]):
        raise ValueError("Occupancy shape %s differs from logits shape %s" % (str(occupancy.shape), str(logits.shape)))
    z = logits.reshape(-1, 1)
    t = np.asarray(occupancy, dtype=np.int64).reshape((-1,))
    ignore = np.asarray(invalid, dtype=bool).reshape((-1,))
    s = sigmoid(z)
    probs = concat([1.0 - s, s], axis=1)
    return lovasz_softmax(probs, t, ignore) + bce_with_logits(z, t, ignore)


def completion_loss(com_aux_logits: Sequence[Tensor], targets: MultiScaleTargets) -> Tuple[Tensor, List[Tensor]]:
    """
    Sums the losses of the completion heads (stage i is supervised at scale 1/2^i).

    :param com_aux_logits: the logits of the three heads
    :type com_aux_logits: list
    :param targets: the targets
    :type targets: MultiScaleTargets
    :return: the sum, the per-stage losses
    :rtype: tuple
    """
    stages = [completion_stage_loss(x, targets.occupancy[i + 1], targets.occupancy_invalid[i + 1])
              for i, x in enumerate(com_aux_logits)]
    return _sum(stages), stages


def bev_loss(ssc_logits: Tensor, labels: np.ndarray, invalid: np.ndarray) -> Tensor:
    """
    Lovász + cross-entropy of the final prediction over all valid voxels (empty included).

    :param ssc_logits: the B x (C_n+1) x H x L x W logits
    :type ssc_logits: Tensor
    :param labels: the B x L x W x H class ids
    :type labels: np.ndarray
    :param invalid: the B x L x W x H invalid mask
    :type invalid: np.ndarray
    :return: the loss
    :rtype: Tensor
    """
    b, k, lz, lx, ly = ssc_logits.shape
    if tuple(labels.shape) != (b, lx, ly, lz):
        raise ValueError("Labels of shape %s don't match logits of shape %s" % (str(labels.shape), str(ssc_logits.shape)))
    rows = ssc_logits.transpose(0, 3, 4, 2, 1).reshape(-1, k)
    t = np.asarray(labels, dtype=np.int64).reshape((-1,))
    ignore = np.asarray(invalid, dtype=bool).reshape((-1,))
    return lovasz_softmax(softmax(rows, axis=1), t, ignore) + cross_entropy(rows, t, ignore)


def total_loss(l_bev, l_s, l_c, bev_weight: float = 3.0, semantic_weight: float = 1.0,
               completion_weight: float = 1.0) -> Tensor:
    """
    The multi-task loss bev_weight * l_bev + semantic_weight * l_s + completion_weight * l_c.

    :param l_bev: the BEV loss
    :param l_s: the semantic loss
    :param l_c: the completion loss
    :return: the total
    :rtype: Tensor
    """
    l_bev = as_tensor(l_bev)
    l_s = as_tensor(l_s, l_bev.dtype)
    l_c = as_tensor(l_c, l_bev.dtype)
    return scalar_mul(l_bev, bev_weight) + scalar_mul(l_s, semantic_weight) + scalar_mul(l_c, completion_weight)


def _sum(terms: Sequence[Tensor]) -> Optional[Tensor]:
    result = None
    for t in terms:
        result = t if result is None else result + t
    return result


def compute_losses(output, targets: MultiScaleTargets, bev_weight: float = 3.0, semantic_weight: float = 1.0,
                   completion_weight: float = 1.0, multi_scale_supervision: bool = True) -> Tuple[Tensor, LossReport]:
    """
    Computes all losses of a forward pass.

    :param output: the training forward output
    :type output: ForwardOutput
    :param targets: the targets
    :type targets: MultiScaleTargets
    :param multi_scale_supervision: whether to include the auxiliary head losses
    :type multi_scale_supervision: bool
    :return: the total loss (for backpropagation), the report
    :rtype: tuple
    """
    report = LossReport()
    l_bev = bev_loss(output.ssc_logits, targets.labels[0], targets.invalid[0])
    l_s = zero_loss(output.ssc_logits)
    l_c = zero_loss(output.ssc_logits)
    if multi_scale_supervision:
        if len(output.sem_aux_logits) > 0:
            l_s, stages = semantic_loss(output.sem_aux_logits, targets)
            report.l_s_stages = [s.item() for s in stages]
        if len(output.com_aux_logits) > 0:
            l_c, stages = completion_loss(output.com_aux_logits, targets)
            report.l_c_stages = [s.item() for s in stages]
    total = total_loss(l_bev, l_s, l_c, bev_weight, semantic_weight, completion_weight)
    report.l_bev = l_bev.item()
    report.l_s = l_s.item()
    report.l_c = l_c.item()
    report.l_total = bev_weight * report.l_bev + semantic_weight * report.l_s + completion_weight * report.l_c
    return total, report
