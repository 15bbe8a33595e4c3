from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from coed.logging import LoggableObject

from .config import ModelConfig, SynthConfig
from .errors import NumericalCheckError, UsageError
from .functional import (linear, relu, sigmoid, softmax, log_softmax, global_avg_pool2d, conv2d, conv3d,
                         conv2d_transposed, max_pool3d, channel_norm, segment_norm, scatter_reduce)
from .grid import LabelGrid, VoxelGridSpec, group_keys, REDUCE_MAX, REDUCE_MEAN, REDUCE_SUM
from .layers import ARF
from .losses import (MultiScaleTargets, bce_with_logits, bev_loss, completion_stage_loss, compute_losses,
                     cross_entropy, lovasz_softmax, semantic_stage_loss, total_loss)
from .network import SSCRSModel
from .sparse import (SparseVoxelTensor, MODE_STRIDED, bev_project_sparse, build_rulebook,
                     sgfe_downscale, sparse_conv, sparse_residual_block, sparse_to_dense, submanifold_conv3d)
from .stopping import Stoppable
from .storage import ParamRegistry
from .synth import generate_synthetic_scene
from .tensor import (Tape, Tensor, backward, concat, default_dtype, exp, log, matmul, mean, no_grad,
                     scalar_mul, tsum)

STEP = 1e-5
""" central difference step """

THRESHOLD = 1e-5
""" maximum normwise relative error """

TINY_DIMS = (8, 8, 4)
TINY_NUM_CLASSES = 3

SCALE_TINY = "tiny"
SCALES = [
    SCALE_TINY,
]

ENTRIES_PER_PARAMETER = 2
""" entries sampled per parameter tensor of the full model """

# toy classes: ground, boxes, poles
TOY_CLASS_LUT = np.zeros(256, dtype=np.uint8)
TOY_CLASS_LUT[9] = 1
TOY_CLASS_LUT[1] = 2
TOY_CLASS_LUT[13] = 2
TOY_CLASS_LUT[18] = 3

CheckBuilder = Callable[[np.random.Generator], Tuple[Dict[str, Tensor], Callable[[], Tensor], Optional[int]]]
""" rng -> (inputs to check, scalar function of the inputs, entries to sample per input or None for all) """


@dataclass
class CheckResult:
    """
    The outcome of checking a single operation.
    """

    name: str
    max_rel_error: float
    num_entries: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error)) and self.max_rel_error <= THRESHOLD

    def __str__(self):
        return "%-24s %.3e  %6d  %s" % (self.name, self.max_rel_error, self.num_entries, "ok" if self.passed else "FAILED")


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """
    Normwise relative error: max|a - n| / max(max|a|, max|n|, 1e-12).

    :param analytic: the backpropagated gradient entries
    :type analytic: np.ndarray
    :param numeric: the finite difference estimates
    :type numeric: np.ndarray
    :return: the error
    :rtype: float
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def check_gradients(name: str, inputs: Dict[str, Tensor], func: Callable[[], Tensor], step: float = STEP,
                    max_entries: Optional[int] = None, rng: np.random.Generator = None) -> CheckResult:
    """
    Compares the backpropagated gradients of the scalar function with central differences.

    :param name: the name of the check
    :type name: str
    :param inputs: the tensors to differentiate with respect to (perturbed in place)
    :type inputs: dict
    :param func: computes the scalar from the current input values
    :type func: callable
    :param step: the finite difference step
    :type step: float
    :param max_entries: the number of entries to sample per input, all if None
    :type max_entries: int
    :param rng: used for sampling the entries
    :type rng: np.random.Generator
    :return: the result
    :rtype: CheckResult
    """
    for t in inputs.values():
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = func()
    grads = backward(tape, out, inputs)

    analytic = []
    numeric = []
    for key in sorted(inputs.keys()):
        t = inputs[key]
        flat = t.data.reshape((-1,))
        if max_entries is None or max_entries >= flat.size:
            entries = np.arange(flat.size)
        else:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        g = np.asarray(grads[key]).reshape((-1,))
        for i in entries:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + step
                f_plus = func().item()
                flat[i] = orig - step
                f_minus = func().item()
            flat[i] = orig
            numeric.append((f_plus - f_minus) / (2.0 * step))
            analytic.append(g[i])
    return CheckResult(name, relative_error(np.asarray(analytic), np.asarray(numeric)), len(analytic))


_checks = dict()


def add_gradient_check(name: str, builder: CheckBuilder):
    """
    Registers the check for a differentiable operation.

    :param name: the unique name
    :type name: str
    :param builder: generates inputs and the scalar function
    :type builder: callable
    """
    if name in _checks:
        raise ValueError("Gradient check already registered: %s" % name)
    _checks[name] = builder


def get_gradient_checks() -> Dict[str, CheckBuilder]:
    return dict(_checks)


def _t(rng: np.random.Generator, *shape, low: float = -1.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape).astype(np.float64))


def _away_from_zero(rng: np.random.Generator, *shape) -> Tensor:
    mag = rng.uniform(0.1, 1.0, size=shape)
    sign = np.where(rng.random(size=shape) < 0.5, -1.0, 1.0)
    return Tensor((mag * sign).astype(np.float64))


def _distinct(rng: np.random.Generator, *shape) -> Tensor:
    """ values with well separated magnitudes, keeps max reductions away from ties """
    n = int(np.prod(shape))
    values = rng.permutation(n).astype(np.float64) / n + rng.uniform(0.0, 0.1 / n, size=n)
    return Tensor(values.reshape(shape))


def _project(out: Tensor, seed: int = 42) -> Tensor:
    """ reduces any output to a scalar via a fixed random weighting """
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return tsum(out * Tensor(w))


def _random_sparse(rng: np.random.Generator, shape: Tuple[int, int, int], batch_size: int, num_active: int,
                   channels: int) -> SparseVoxelTensor:
    total = batch_size * int(np.prod(shape))
    keys = np.sort(rng.choice(total, size=min(num_active, total), replace=False))
    coords = np.stack(np.unravel_index(keys, (batch_size,) + tuple(shape)), axis=1)
    return SparseVoxelTensor(coords, _t(rng, len(keys), channels), shape, batch_size)


def _build_elementwise(op):
    def _builder(rng):
        a = _t(rng, 3, 4)
        b = _t(rng, 3, 4, low=0.5, high=1.5)
        return {"a": a, "b": b}, lambda: _project(op(a, b)), None
    return _builder


add_gradient_check("add", _build_elementwise(lambda a, b: a + b))
add_gradient_check("sub", _build_elementwise(lambda a, b: a - b))
add_gradient_check("mul", _build_elementwise(lambda a, b: a * b))
add_gradient_check("div", _build_elementwise(lambda a, b: a / b))


def _check_broadcast(rng):
    a = _t(rng, 3, 4)
    b = _t(rng, 1, 4)
    return {"a": a, "b": b}, lambda: _project(a * b + b), None


add_gradient_check("broadcast", _check_broadcast)


def _check_scalar_mul(rng):
    a = _t(rng, 5)
    return {"a": a}, lambda: _project(scalar_mul(a, -2.5)), None


add_gradient_check("scalar_mul", _check_scalar_mul)


def _check_matmul(rng):
    a = _t(rng, 3, 4)
    b = _t(rng, 4, 2)
    return {"a": a, "b": b}, lambda: _project(matmul(a, b)), None


add_gradient_check("matmul", _check_matmul)


def _check_sum(rng):
    a = _t(rng, 2, 3, 4)
    return {"a": a}, lambda: _project(tsum(a, axis=1)) + tsum(a), None


add_gradient_check("sum", _check_sum)


def _check_mean(rng):
    a = _t(rng, 2, 3, 4)
    return {"a": a}, lambda: _project(mean(a, axis=(0, 2), keepdims=True)), None


add_gradient_check("mean", _check_mean)


def _check_reshape_transpose(rng):
    a = _t(rng, 2, 3, 4)
    return {"a": a}, lambda: _project(a.transpose(2, 0, 1).reshape(4, 6)), None


add_gradient_check("reshape_transpose", _check_reshape_transpose)


def _check_getitem(rng):
    a = _t(rng, 5, 3)
    rows = np.array([0, 2, 2, 4])
    return {"a": a}, lambda: _project(a[rows]) + _project(a[1:3, 1:], seed=7), None


add_gradient_check("getitem", _check_getitem)


def _check_concat(rng):
    a = _t(rng, 2, 3)
    b = _t(rng, 2, 2)
    return {"a": a, "b": b}, lambda: _project(concat([a, b], axis=1)), None


add_gradient_check("concat", _check_concat)


def _check_exp_log(rng):
    a = _t(rng, 6, low=0.5, high=2.0)
    return {"a": a}, lambda: _project(exp(a)) + _project(log(a), seed=3), None


add_gradient_check("exp_log", _check_exp_log)


def _check_linear(rng):
    x = _t(rng, 5, 4)
    w = _t(rng, 3, 4)
    b = _t(rng, 3)
    return {"x": x, "w": w, "b": b}, lambda: _project(linear(x, w, b)), None


add_gradient_check("linear", _check_linear)


def _check_relu(rng):
    x = _away_from_zero(rng, 4, 5)
    return {"x": x}, lambda: _project(relu(x)), None


add_gradient_check("relu", _check_relu)


def _check_sigmoid(rng):
    x = _t(rng, 4, 5, low=-3.0, high=3.0)
    return {"x": x}, lambda: _project(sigmoid(x)), None


add_gradient_check("sigmoid", _check_sigmoid)


def _check_softmax(rng):
    x = _t(rng, 4, 5, low=-2.0, high=2.0)
    return {"x": x}, lambda: _project(softmax(x, axis=1)), None


add_gradient_check("softmax", _check_softmax)


def _check_log_softmax(rng):
    x = _t(rng, 4, 5, low=-2.0, high=2.0)
    return {"x": x}, lambda: _project(log_softmax(x, axis=0)), None


add_gradient_check("log_softmax", _check_log_softmax)


def _check_global_avg_pool2d(rng):
    x = _t(rng, 2, 3, 4, 5)
    return {"x": x}, lambda: _project(global_avg_pool2d(x)), None


add_gradient_check("global_avg_pool2d", _check_global_avg_pool2d)


def _check_conv3d(rng):
    x = _t(rng, 1, 2, 4, 4, 3)
    w = _t(rng, 3, 2, 3, 3, 3)
    b = _t(rng, 3)
    return {"x": x, "w": w, "b": b}, lambda: _project(conv3d(x, w, b, stride=1, padding=1)), None


add_gradient_check("conv3d", _check_conv3d)


def _check_conv3d_strided(rng):
    x = _t(rng, 1, 2, 4, 4, 4)
    w = _t(rng, 2, 2, 1, 1, 1)
    return {"x": x, "w": w}, lambda: _project(conv3d(x, w, None, stride=2, padding=0)), None


add_gradient_check("conv3d_strided", _check_conv3d_strided)


def _check_conv2d(rng):
    x = _t(rng, 2, 2, 5, 4)
    w = _t(rng, 3, 2, 3, 3)
    b = _t(rng, 3)
    return {"x": x, "w": w, "b": b}, lambda: _project(conv2d(x, w, b, stride=1, padding=1)), None


add_gradient_check("conv2d", _check_conv2d)


def _check_conv2d_transposed(rng):
    x = _t(rng, 2, 3, 3, 2)
    w = _t(rng, 3, 2, 2, 2)
    b = _t(rng, 2)
    return {"x": x, "w": w, "b": b}, lambda: _project(conv2d_transposed(x, w, b, stride=2)), None


add_gradient_check("conv2d_transposed", _check_conv2d_transposed)


def _check_max_pool3d(rng):
    x = _distinct(rng, 1, 2, 4, 4, 1)
    return {"x": x}, lambda: _project(max_pool3d(x)), None


add_gradient_check("max_pool3d", _check_max_pool3d)


def _check_channel_norm(rng):
    x = _t(rng, 2, 3, 4, 3)
    gain = _t(rng, 3, low=0.5, high=1.5)
    shift = _t(rng, 3)
    return {"x": x, "gain": gain, "shift": shift}, lambda: _project(channel_norm(x, gain, shift)), None


add_gradient_check("channel_norm", _check_channel_norm)


def _check_segment_norm(rng):
    x = _t(rng, 9, 3)
    segments = np.array([0, 0, 0, 0, 1, 1, 1, 1, 1])
    gain = _t(rng, 3, low=0.5, high=1.5)
    shift = _t(rng, 3)
    return {"x": x, "gain": gain, "shift": shift}, lambda: _project(segment_norm(x, segments, 2, gain, shift)), None


add_gradient_check("segment_norm", _check_segment_norm)


def _build_scatter(reduce: str):
    def _builder(rng):
        x = _distinct(rng, 10, 3)
        _, inverse = group_keys(rng.integers(0, 4, size=10))
        num_groups = int(inverse.max()) + 1
        return {"x": x}, lambda: _project(scatter_reduce(x, inverse, num_groups, reduce)), None
    return _builder


add_gradient_check("scatter_max", _build_scatter(REDUCE_MAX))
add_gradient_check("scatter_mean", _build_scatter(REDUCE_MEAN))
add_gradient_check("scatter_sum", _build_scatter(REDUCE_SUM))


def _check_sparse_conv_submanifold(rng):
    x = _random_sparse(rng, (4, 4, 4), 2, 30, 2)
    w = _t(rng, 3, 2, 3, 3, 3)
    b = _t(rng, 3)
    feats = x.features
    return {"x": feats, "w": w, "b": b}, lambda: _project(submanifold_conv3d(x.with_features(feats), w, b).features), None


add_gradient_check("sparse_conv_submanifold", _check_sparse_conv_submanifold)


def _check_sparse_conv_strided(rng):
    x = _random_sparse(rng, (4, 4, 2), 1, 16, 2)
    rb = build_rulebook(x.coords, x.spatial_shape, 2, stride=2, mode=MODE_STRIDED)
    w = _t(rng, 3, 2, 2, 2, 2)
    b = _t(rng, 3)
    feats = x.features
    return {"x": feats, "w": w, "b": b}, lambda: _project(sparse_conv(feats, w, b, rb)), None


add_gradient_check("sparse_conv_strided", _check_sparse_conv_strided)


def _check_sparse_to_dense(rng):
    x = _random_sparse(rng, (3, 3, 2), 2, 10, 2)
    feats = x.features
    return {"x": feats}, lambda: _project(sparse_to_dense(x.with_features(feats))), None


add_gradient_check("sparse_to_dense", _check_sparse_to_dense)


def _check_bev_project_sparse(rng):
    x = _random_sparse(rng, (3, 3, 3), 2, 25, 2)
    feats = _distinct(rng, x.num_active, 2)
    return {"x": feats}, lambda: _project(bev_project_sparse(x.with_features(feats))), None


add_gradient_check("bev_project_sparse", _check_bev_project_sparse)


def _check_sparse_residual_block(rng):
    x = _random_sparse(rng, (4, 4, 2), 1, 14, 2)
    inputs = {
        "x": x.features,
        "conv1.w": _t(rng, 3, 2, 3, 3, 3, low=-0.5, high=0.5), "conv1.b": _t(rng, 3),
        "conv2.w": _t(rng, 3, 3, 3, 3, 3, low=-0.5, high=0.5), "conv2.b": _t(rng, 3),
        "norm1.g": _t(rng, 2, low=0.5, high=1.5), "norm1.s": _t(rng, 2),
        "norm2.g": _t(rng, 3, low=0.5, high=1.5), "norm2.s": _t(rng, 3),
        "proj.w": _t(rng, 3, 2), "proj.b": _t(rng, 3),
    }
    i = inputs

    def _func():
        y = sparse_residual_block(x.with_features(i["x"]), (i["conv1.w"], i["conv1.b"]), (i["conv2.w"], i["conv2.b"]),
                                  (i["norm1.g"], i["norm1.s"]), (i["norm2.g"], i["norm2.s"]),
                                  projection=(i["proj.w"], i["proj.b"]))
        return _project(y.features)

    return inputs, _func, None


add_gradient_check("sparse_residual_block", _check_sparse_residual_block)


def _check_sgfe(rng):
    x = _random_sparse(rng, (4, 4, 4), 1, 20, 2)
    feats = _distinct(rng, x.num_active, 2)
    inputs = {"x": feats, "score.w": _t(rng, 3, 6), "score.b": _t(rng, 3)}
    for r in range(3):
        inputs["branch%d.w" % r] = _t(rng, 2, 2)
        inputs["branch%d.b" % r] = _t(rng, 2)
    i = inputs

    def _func():
        y = sgfe_downscale(x.with_features(i["x"]), [(i["branch%d.w" % r], i["branch%d.b" % r]) for r in range(3)],
                           (i["score.w"], i["score.b"]))
        return _project(y.features)

    return inputs, _func, None


add_gradient_check("sgfe_downscale", _check_sgfe)


def _build_arf(attention: bool):
    def _builder(rng):
        params = ParamRegistry()
        arf = ARF(params, "arf", rng, 4, num_sources=3, reduction=2, attention=attention)
        for _, p in params.items():
            p.data = p.data + rng.uniform(-0.2, 0.2, size=p.shape)
        sources = [_t(rng, 2, 4, 2, 2) for _ in range(3)]
        inputs = params.as_dict()
        for n, s in enumerate(sources):
            inputs["source%d" % n] = s
        return inputs, lambda: _project(arf(sources)), None
    return _builder


add_gradient_check("arf", _build_arf(True))
add_gradient_check("arf_concat", _build_arf(False))


def _check_cross_entropy(rng):
    x = _t(rng, 6, 4, low=-2.0, high=2.0)
    targets = rng.integers(0, 4, size=6)
    ignore = np.array([False, True, False, False, False, True])
    return {"x": x}, lambda: cross_entropy(x, targets, ignore), None


add_gradient_check("cross_entropy", _check_cross_entropy)


def _check_bce_with_logits(rng):
    x = _t(rng, 8, 1, low=-3.0, high=3.0)
    targets = rng.integers(0, 2, size=8)
    return {"x": x}, lambda: bce_with_logits(x, targets), None


add_gradient_check("bce_with_logits", _check_bce_with_logits)


def _check_lovasz_softmax(rng):
    x = _t(rng, 8, 3, low=-2.0, high=2.0)
    targets = rng.integers(0, 3, size=8)
    ignore = np.zeros(8, dtype=bool)
    ignore[3] = True
    return {"x": x}, lambda: lovasz_softmax(softmax(x, axis=1), targets, ignore), None


add_gradient_check("lovasz_softmax", _check_lovasz_softmax)


def _check_bev_loss(rng):
    x = _t(rng, 1, 3, 2, 2, 2, low=-2.0, high=2.0)
    labels = rng.integers(0, 3, size=(1, 2, 2, 2))
    invalid = np.zeros(labels.shape, dtype=bool)
    invalid[0, 1, 1, 0] = True
    return {"x": x}, lambda: bev_loss(x, labels, invalid), None


add_gradient_check("bev_loss", _check_bev_loss)


def _check_semantic_stage_loss(rng):
    x = _random_sparse(rng, (2, 2, 2), 1, 6, 3)
    feats = _t(rng, x.num_active, 3, low=-2.0, high=2.0)
    labels = rng.integers(0, 4, size=(1, 2, 2, 2))
    labels[tuple(x.coords[0])] = 1
    invalid = np.zeros(labels.shape, dtype=bool)
    return {"x": feats}, lambda: semantic_stage_loss(x.with_features(feats), labels, invalid), None


add_gradient_check("semantic_stage_loss", _check_semantic_stage_loss)


def _check_completion_stage_loss(rng):
    x = _t(rng, 1, 1, 2, 2, 2, low=-2.0, high=2.0)
    occupancy = rng.random(size=(1, 2, 2, 2)) < 0.5
    invalid = np.zeros(occupancy.shape, dtype=bool)
    return {"x": x}, lambda: completion_stage_loss(x, occupancy, invalid), None


add_gradient_check("completion_stage_loss", _check_completion_stage_loss)


def _check_total_loss(rng):
    a = _t(rng, 1)
    b = _t(rng, 1)
    c = _t(rng, 1)
    return {"a": a, "b": b, "c": c}, lambda: tsum(total_loss(a, b, c)), None


add_gradient_check("total_loss", _check_total_loss)


def toy_scene(spec: VoxelGridSpec, seed: int = 1):
    """
    Generates a synthetic scene on the toy grid with the classes folded onto 1..3.

    :param spec: the toy grid
    :type spec: VoxelGridSpec
    :param seed: the scene seed
    :type seed: int
    :return: the scene
    :rtype: SceneSample
    """
    synth = SynthConfig()
    synth.set_value("sensor_height", 0.3)
    synth.set_value("num_beams", 16)
    synth.set_value("azimuth_step", 2.0)
    sample = generate_synthetic_scene(seed, spec, synth)
    sample.gt = LabelGrid(TOY_CLASS_LUT[sample.gt.labels], sample.gt.invalid)
    return sample


def toy_model_config() -> ModelConfig:
    """
    Returns the narrow channel plan of the full-model check.

    :return: the configuration
    :rtype: ModelConfig
    """
    result = ModelConfig()
    result.set_value("num_classes", TINY_NUM_CLASSES)
    result.set_value("point_widths", [4])
    result.set_value("voxel_feature_width", 3)
    result.set_value("semantic_widths", [3, 3, 3])
    result.set_value("completion_widths", [2, 2, 2, 2])
    result.set_value("bev_widths", [3, 3, 3, 3])
    result.set_value("decoder_widths", [3, 3, 3])
    result.set_value("arf_reduction", 2)
    return result


def _check_model(rng):
    spec = VoxelGridSpec((0.0, -0.8, -0.4), 0.2, TINY_DIMS)
    model = SSCRSModel(toy_model_config(), spec)
    # no exact zeros in front of the ReLUs
    for _, p in model.params.items():
        p.data = p.data + rng.uniform(-0.1, 0.1, size=p.shape)
    sample = toy_scene(spec)
    targets = MultiScaleTargets.from_grids([sample.gt])
    occupancy = sample.input_occupancy[None]

    def _func():
        output = model.forward([sample.points], occupancy, training=True)
        total, _ = compute_losses(output, targets)
        return total

    return model.params.as_dict(), _func, ENTRIES_PER_PARAMETER


add_gradient_check("model", _check_model)


class GradientSuite(LoggableObject, Stoppable):
    """
    Runs the registered gradient checks at 64-bit precision.
    """

    def __init__(self, scale: str = SCALE_TINY, seed: int = 1, names: List[str] = None):
        """
        Initializes the suite.

        :param scale: the problem size, see SCALES
        :type scale: str
        :param seed: the seed for inputs and sampling
        :type seed: int
        :param names: the checks to run, all if None
        :type names: list
        """
        super().__init__()
        if scale not in SCALES:
            raise UsageError("Unknown gradcheck scale '%s', available: %s" % (scale, ", ".join(SCALES)))
        checks = get_gradient_checks()
        if names is None:
            names = sorted(checks.keys())
        for name in names:
            if name not in checks:
                raise UsageError("Unknown gradient check: %s" % name)
        self.scale = scale
        self.seed = seed
        self.names = list(names)
        self._stopped = False

    def run_check(self, name: str) -> CheckResult:
        builder = get_gradient_checks()[name]
        rng = np.random.default_rng([self.seed, sorted(get_gradient_checks().keys()).index(name)])
        with default_dtype(np.float64):
            inputs, func, max_entries = builder(rng)
            return check_gradients(name, inputs, func, max_entries=max_entries, rng=rng)

    def run(self, fail: bool = True) -> List[CheckResult]:
        """
        Runs the checks and logs the worst relative error per operation.

        :param fail: whether to raise a NumericalCheckError if any check fails
        :type fail: bool
        :return: the results
        :rtype: list
        """
        self._stopped = False
        results = []
        for name in self.names:
            if self._stopped:
                break
            result = self.run_check(name)
            self.log(str(result))
            results.append(result)
        failed = [r.name for r in results if not r.passed]
        if fail and len(failed) > 0:
            raise NumericalCheckError("Gradient checks failed (threshold %g): %s" % (THRESHOLD, ", ".join(failed)))
        return results

    def stop_execution(self):
        self._stopped = True

    @property
    def is_stopped(self) -> bool:
        return self._stopped
