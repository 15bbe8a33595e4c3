from typing import Sequence, Tuple, Union

import numpy as np

from .grid import REDUCE_MAX, REDUCE_MEAN, REDUCTIONS, block_factors
from .tensor import Tensor, as_tensor, make_result

NORM_EPS = 1e-5


def linear(x: Tensor, weight: Tensor, bias: Tensor = None) -> Tensor:
    """
    Per-row affine map: x @ weight^T + bias.

    :param x: the MxC_in input
    :type x: Tensor
    :param weight: the C_out x C_in weights
    :type weight: Tensor
    :param bias: the C_out biases, optional
    :type bias: Tensor
    :return: the M x C_out output
    :rtype: Tensor
    """
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError("linear: incompatible shapes %s and %s" % (str(x.shape), str(weight.shape)))
    inputs = [x, weight] if bias is None else [x, weight, bias]
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def _backward(g):
        result = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            result.append(g.sum(axis=0))
        return result

    return make_result("linear", out, inputs, _backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def _backward(g):
        return [g * mask]

    return make_result("relu", np.where(mask, x.data, 0).astype(x.dtype), [x], _backward)


def sigmoid(x: Tensor) -> Tensor:
    # tanh form doesn't overflow for large |x|
    y = (0.5 * (1.0 + np.tanh(0.5 * x.data))).astype(x.dtype)

    def _backward(g):
        return [g * y * (1 - y)]

    return make_result("sigmoid", y, [x], _backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def _backward(g):
        return [y * (g - np.sum(g * y, axis=axis, keepdims=True))]

    return make_result("softmax", y, [x], _backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def _backward(g):
        return [g - p * np.sum(g, axis=axis, keepdims=True)]

    return make_result("log_softmax", y, [x], _backward)


def global_avg_pool2d(x: Tensor) -> Tensor:
    """
    Averages each channel over the spatial dims: BxCxHxW -> BxC.

    :param x: the input
    :type x: Tensor
    :return: the pooled features
    :rtype: Tensor
    """
    if x.ndim != 4:
        raise ValueError("global_avg_pool2d expects BxCxHxW, got: %s" % str(x.shape))
    n = x.shape[2] * x.shape[3]

    def _backward(g):
        return [np.broadcast_to(g[:, :, None, None] / n, x.shape).copy()]

    return make_result("global_avg_pool2d", x.data.mean(axis=(2, 3)), [x], _backward)


def _check_conv(x: Tensor, weight: Tensor, spatial: int, stride: int, padding: int):
    if x.ndim != spatial + 2:
        raise ValueError("Expected input with %d dims, got shape: %s" % (spatial + 2, str(x.shape)))
    if weight.ndim != spatial + 2:
        raise ValueError("Expected weight with %d dims, got shape: %s" % (spatial + 2, str(weight.shape)))
    if x.shape[1] != weight.shape[1]:
        raise ValueError("Channel mismatch: input has %d, weight expects %d" % (x.shape[1], weight.shape[1]))
    if stride < 1:
        raise ValueError("Stride must be at least 1: %d" % stride)
    for i in range(spatial):
        if x.shape[2 + i] + 2 * padding < weight.shape[2 + i]:
            raise ValueError("Kernel %s larger than padded input %s" % (str(weight.shape[2:]), str(x.shape[2:])))


def _conv_slices(kernel: Tuple[int, ...], out_shape: Tuple[int, ...], stride: int):
    """
    Yields the kernel offset and the slice of the padded input it reads.
    """
    for off in np.ndindex(*kernel):
        sl = (slice(None), slice(None)) + tuple(
            slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(off, out_shape))
        yield off, sl


def conv(x: Tensor, weight: Tensor, bias: Tensor = None, stride: int = 1, padding: int = 0) -> Tensor:
    """
    N-dimensional cross-correlation, one kernel offset at a time.

    :param x: the B x C_in x S_1..S_n input
    :type x: Tensor
    :param weight: the C_out x C_in x k_1..k_n weights
    :type weight: Tensor
    :param bias: the C_out biases, optional
    :type bias: Tensor
    :param stride: the stride for all spatial axes
    :type stride: int
    :param padding: the zero padding for all spatial axes
    :type padding: int
    :return: the B x C_out x S'_1..S'_n output, S' = (S + 2p - k) // stride + 1
    :rtype: Tensor
    """
    nd = x.ndim - 2
    _check_conv(x, weight, nd, stride, padding)
    kernel = weight.shape[2:]
    pad = [(0, 0), (0, 0)] + [(padding, padding)] * nd
    xp = np.pad(x.data, pad) if padding > 0 else x.data
    out_shape = tuple((xp.shape[2 + i] - kernel[i]) // stride + 1 for i in range(nd))
    w = weight.data

    out = np.zeros((x.shape[0],) + out_shape + (w.shape[0],), dtype=np.result_type(x.data, w))
    for off, sl in _conv_slices(kernel, out_shape, stride):
        out += np.tensordot(xp[sl], w[(slice(None), slice(None)) + off], axes=([1], [1]))
    out = np.moveaxis(out, -1, 1)
    if bias is not None:
        out = out + bias.data.reshape((1, -1) + (1,) * nd)

    inputs = [x, weight] if bias is None else [x, weight, bias]

    def _backward(g):
        g_last = np.moveaxis(g, 1, -1)
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        sp_g = list(range(0, nd + 1))
        sp_x = [0] + list(range(2, nd + 2))
        for off, sl in _conv_slices(kernel, out_shape, stride):
            idx = (slice(None), slice(None)) + off
            gw[idx] = np.tensordot(g_last, xp[sl], axes=(sp_g, sp_x))
            gxp[sl] += np.moveaxis(np.tensordot(g_last, w[idx], axes=([nd + 1], [0])), -1, 1)
        if padding > 0:
            gx = gxp[(slice(None), slice(None)) + tuple(slice(padding, padding + n) for n in x.shape[2:])]
        else:
            gx = gxp
        result = [gx, gw]
        if bias is not None:
            result.append(g.sum(axis=tuple([0] + list(range(2, nd + 2)))))
        return result

    return make_result("conv%dd" % nd, out, inputs, _backward)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor = None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 5:
        raise ValueError("conv3d expects B x C x D x H x W, got: %s" % str(x.shape))
    return conv(x, weight, bias, stride=stride, padding=padding)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor = None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4:
        raise ValueError("conv2d expects B x C x H x W, got: %s" % str(x.shape))
    return conv(x, weight, bias, stride=stride, padding=padding)


def conv2d_transposed(x: Tensor, weight: Tensor, bias: Tensor = None, stride: int = 2) -> Tensor:
    """
    Transposed 2D convolution with kernel size equal to the stride (non-overlapping), which
    multiplies the spatial dims by the stride.

    :param x: the B x C_in x H x W input
    :type x: Tensor
    :param weight: the C_in x C_out x k x k weights (k = stride)
    :type weight: Tensor
    :param bias: the C_out biases, optional
    :type bias: Tensor
    :param stride: the upscaling factor
    :type stride: int
    :return: the B x C_out x (H*k) x (W*k) output
    :rtype: Tensor
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d_transposed expects 4-dim input and weight, got %s and %s" % (str(x.shape), str(weight.shape)))
    if x.shape[1] != weight.shape[0]:
        raise ValueError("Channel mismatch: input has %d, weight expects %d" % (x.shape[1], weight.shape[0]))
    k = weight.shape[2]
    if weight.shape[3] != k or k != stride:
        raise ValueError("Kernel %s must be square and equal to the stride %d" % (str(weight.shape[2:]), stride))
    b, _, h, w = x.shape
    c_out = weight.shape[1]
    # B x H x W x C_out x k x k
    t = np.tensordot(x.data, weight.data, axes=([1], [0]))
    out = t.transpose((0, 3, 1, 4, 2, 5)).reshape((b, c_out, h * k, w * k))
    if bias is not None:
        out = out + bias.data.reshape((1, -1, 1, 1))

    inputs = [x, weight] if bias is None else [x, weight, bias]

    def _backward(g):
        gt = g.reshape((b, c_out, h, k, w, k)).transpose((0, 2, 4, 1, 3, 5))
        gx = np.tensordot(gt, weight.data, axes=([3, 4, 5], [1, 2, 3])).transpose((0, 3, 1, 2))
        gw = np.tensordot(x.data, gt, axes=([0, 2, 3], [0, 1, 2]))
        result = [gx, gw]
        if bias is not None:
            result.append(g.sum(axis=(0, 2, 3)))
        return result

    return make_result("conv2d_transposed", out, inputs, _backward)


def max_pool(x: Tensor, window: Sequence[int]) -> Tensor:
    """
    Non-overlapping max pooling (stride = window) over the spatial dims; the gradient
    goes to the first maximum of each window.

    :param x: the B x C x S_1..S_n input
    :type x: Tensor
    :param window: the window per spatial axis
    :type window: list
    :return: the pooled output
    :rtype: Tensor
    """
    nd = x.ndim - 2
    window = tuple(int(w) for w in window)
    if len(window) != nd:
        raise ValueError("Window %s doesn't match %d spatial dims" % (str(window), nd))
    for s, w in zip(x.shape[2:], window):
        if s % w != 0:
            raise ValueError("Spatial dims %s not divisible by window %s" % (str(x.shape[2:]), str(window)))
    out_shape = tuple(s // w for s, w in zip(x.shape[2:], window))
    split = x.shape[:2] + tuple(v for pair in zip(out_shape, window) for v in pair)
    perm = (0, 1) + tuple(2 + 2 * i for i in range(nd)) + tuple(3 + 2 * i for i in range(nd))
    blocks = x.data.reshape(split).transpose(perm)
    windowed_shape = blocks.shape
    blocks = blocks.reshape(x.shape[:2] + out_shape + (-1,))
    arg = np.argmax(blocks, axis=-1)[..., None]
    out = np.take_along_axis(blocks, arg, axis=-1)[..., 0]
    inverse = tuple(np.argsort(perm))

    def _backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg, g[..., None], axis=-1)
        gb = gb.reshape(windowed_shape).transpose(inverse).reshape(x.shape)
        return [gb]

    return make_result("max_pool", out, [x], _backward)


def max_pool3d(x: Tensor, window: int = 2) -> Tensor:
    """
    Halves (window=2) each spatial axis of a B x C x D x H x W tensor; axes of extent 1 are kept.

    :param x: the input
    :type x: Tensor
    :param window: the window/stride
    :type window: int
    :return: the pooled tensor
    :rtype: Tensor
    """
    if x.ndim != 5:
        raise ValueError("max_pool3d expects B x C x D x H x W, got: %s" % str(x.shape))
    return max_pool(x, block_factors(x.shape[2:], window))


def channel_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = NORM_EPS) -> Tensor:
    """
    Normalizes every channel of every sample over its spatial dims, followed by a per-channel
    affine transform.

    :param x: the B x C x S_1..S_n input
    :type x: Tensor
    :param gain: the C gains
    :type gain: Tensor
    :param shift: the C shifts
    :type shift: Tensor
    :param eps: added to the variance
    :type eps: float
    :return: the normalized tensor
    :rtype: Tensor
    """
    if x.ndim < 3 or gain.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
        raise ValueError("channel_norm: incompatible shapes %s, %s, %s" % (str(x.shape), str(gain.shape), str(shift.shape)))
    axes = tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=axes, keepdims=True) + eps)
    xhat = centered * inv
    out = xhat * gain.data.reshape(bshape) + shift.data.reshape(bshape)

    def _backward(g):
        gxhat = g * gain.data.reshape(bshape)
        gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        ggain = (g * xhat).sum(axis=(0,) + axes)
        gshift = g.sum(axis=(0,) + axes)
        return [gx, ggain, gshift]

    return make_result("channel_norm", out.astype(x.dtype), [x, gain, shift], _backward)


def segment_norm(x: Tensor, segments: np.ndarray, num_segments: int, gain: Tensor, shift: Tensor,
                 eps: float = NORM_EPS) -> Tensor:
    """
    Like channel_norm for row-wise features (eg sparse voxels): each channel is normalized
    over the rows of the same segment (eg sample of the batch).

    :param x: the M x C features
    :type x: Tensor
    :param segments: the segment of each row
    :type segments: np.ndarray
    :param num_segments: the number of segments
    :type num_segments: int
    :param gain: the C gains
    :type gain: Tensor
    :param shift: the C shifts
    :type shift: Tensor
    :param eps: added to the variance
    :type eps: float
    :return: the normalized features
    :rtype: Tensor
    """
    if x.ndim != 2 or gain.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
        raise ValueError("segment_norm: incompatible shapes %s, %s, %s" % (str(x.shape), str(gain.shape), str(shift.shape)))
    segments = np.asarray(segments, dtype=np.int64)
    counts = np.maximum(np.bincount(segments, minlength=num_segments), 1).astype(x.dtype)[:, None]

    def _segment_mean(a):
        s = np.zeros((num_segments, a.shape[1]), dtype=a.dtype)
        np.add.at(s, segments, a)
        return (s / counts)[segments]

    mu = _segment_mean(x.data)
    centered = x.data - mu
    inv = 1.0 / np.sqrt(_segment_mean(centered * centered) + eps)
    xhat = centered * inv
    out = xhat * gain.data + shift.data

    def _backward(g):
        gxhat = g * gain.data
        gx = inv * (gxhat - _segment_mean(gxhat) - xhat * _segment_mean(gxhat * xhat))
        return [gx, (g * xhat).sum(axis=0), g.sum(axis=0)]

    return make_result("segment_norm", out.astype(x.dtype), [x, gain, shift], _backward)


def scatter_reduce(x: Tensor, inverse: np.ndarray, num_groups: int, reduce: str = REDUCE_MAX) -> Tensor:
    """
    Differentiable grouping of rows: row i of x goes into group inverse[i]. For 'max' the
    gradient flows to the first row (lowest index) that attains the maximum.

    :param x: the M x C features
    :type x: Tensor
    :param inverse: the group of each row (see grid.group_keys)
    :type inverse: np.ndarray
    :param num_groups: the number of groups U
    :type num_groups: int
    :param reduce: the reduction, see grid.REDUCTIONS
    :type reduce: str
    :return: the U x C reduced features
    :rtype: Tensor
    """
    if reduce not in REDUCTIONS:
        raise ValueError("Unknown reduction: %s" % reduce)
    inverse = np.asarray(inverse, dtype=np.int64)
    m, c = x.shape
    if reduce == REDUCE_MAX:
        out = np.full((num_groups, c), -np.inf, dtype=x.dtype)
        np.maximum.at(out, inverse, x.data)
        rows, cols = np.nonzero(x.data == out[inverse])
        first = np.full((num_groups, c), m, dtype=np.int64)
        np.minimum.at(first, (inverse[rows], cols), rows)
        col_grid = np.broadcast_to(np.arange(c), first.shape)
        valid = first < m

        def _backward(g):
            gx = np.zeros_like(x.data)
            gx[first[valid], col_grid[valid]] = g[valid]
            return [gx]
    else:
        out = np.zeros((num_groups, c), dtype=x.dtype)
        np.add.at(out, inverse, x.data)
        if reduce == REDUCE_MEAN:
            counts = np.maximum(np.bincount(inverse, minlength=num_groups), 1).astype(x.dtype)[:, None]
            out = out / counts

            def _backward(g):
                return [(g / counts)[inverse]]
        else:
            def _backward(g):
                return [g[inverse]]

    return make_result("scatter_%s" % reduce, out, [x], _backward)


def zeros(shape: Union[int, Tuple[int, ...]], dtype=None) -> Tensor:
    return as_tensor(np.zeros(shape), dtype)
