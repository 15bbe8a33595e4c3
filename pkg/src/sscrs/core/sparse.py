from typing import List, Optional, Sequence, Tuple

import numpy as np

from .functional import linear, relu, scatter_reduce, segment_norm, softmax
from .grid import REDUCE_MAX, REDUCE_MEAN, block_factors, group_keys
from .tensor import Tensor, as_tensor, concat, make_result

MODE_SUBMANIFOLD = "submanifold"
MODE_STRIDED = "strided"

MODES = [
    MODE_SUBMANIFOLD,
    MODE_STRIDED,
]

SGFE_SCALES = (1, 2, 4)


def linear_keys(coords: np.ndarray, spatial_shape: Sequence[int]) -> np.ndarray:
    """
    Encodes (batch, x, y, z) coordinates as integers, ordered like the coordinates
    (lexicographically).

    :param coords: the Mx4 coordinates
    :type coords: np.ndarray
    :param spatial_shape: the (L, W, H) shape
    :type spatial_shape: tuple
    :return: the M keys
    :rtype: np.ndarray
    """
    c = np.asarray(coords, dtype=np.int64)
    lx, ly, lz = (int(v) for v in spatial_shape)
    return ((c[:, 0] * lx + c[:, 1]) * ly + c[:, 2]) * lz + c[:, 3]


def keys_to_coords(keys: np.ndarray, spatial_shape: Sequence[int]) -> np.ndarray:
    """
    Inverse of linear_keys.

    :param keys: the M keys
    :type keys: np.ndarray
    :param spatial_shape: the (L, W, H) shape
    :type spatial_shape: tuple
    :return: the Mx4 coordinates
    :rtype: np.ndarray
    """
    keys = np.asarray(keys, dtype=np.int64)
    lx, ly, lz = (int(v) for v in spatial_shape)
    z = keys % lz
    rest = keys // lz
    y = rest % ly
    rest = rest // ly
    x = rest % lx
    b = rest // lx
    return np.stack([b, x, y, z], axis=1)


class Rulebook:
    """
    Per kernel offset, the (input row, output row) pairs that drive the gather/scatter of a
    sparse convolution, plus the output coordinates.
    """

    def __init__(self, kernel_size: int, mode: str, in_rows: List[np.ndarray], out_rows: List[np.ndarray],
                 out_coords: np.ndarray, out_shape: Tuple[int, int, int]):
        self.kernel_size = kernel_size
        self.mode = mode
        self.in_rows = in_rows
        self.out_rows = out_rows
        self.out_coords = out_coords
        self.out_shape = out_shape

    @property
    def num_offsets(self) -> int:
        return len(self.in_rows)

    @property
    def num_pairs(self) -> int:
        return int(sum(len(r) for r in self.in_rows))

    def pairs(self, offset: int) -> List[Tuple[int, int]]:
        return list(zip(self.in_rows[offset].tolist(), self.out_rows[offset].tolist()))


def _lookup(sorted_keys: np.ndarray, order: np.ndarray, keys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Finds the rows of the keys, returns the mask of found keys and their rows.
    """
    if len(sorted_keys) == 0:
        return np.zeros(len(keys), dtype=bool), np.zeros(0, dtype=np.int64)
    pos = np.searchsorted(sorted_keys, keys)
    pos_clipped = np.minimum(pos, len(sorted_keys) - 1)
    found = sorted_keys[pos_clipped] == keys
    return found, order[pos_clipped[found]]


def build_rulebook(coords: np.ndarray, spatial_shape: Sequence[int], kernel_size: int, stride: int = 1,
                   mode: str = MODE_SUBMANIFOLD) -> Rulebook:
    """
    Builds the rulebook for the active coordinates. Kernel offsets are enumerated in
    lexicographic (x, y, z) order, matching the flattened k^3 weight layout.

    submanifold: output coords = input coords, pair (i, j) iff coords[i] = coords[j] + (offset - k//2)
    strided: output coords = distinct coords // stride (sorted), pair (i, j) iff
             coords[i] = stride * out_coords[j] + offset

    :param coords: the Mx4 (batch, x, y, z) coordinates
    :type coords: np.ndarray
    :param spatial_shape: the (L, W, H) shape
    :type spatial_shape: tuple
    :param kernel_size: the kernel size per axis
    :type kernel_size: int
    :param stride: the stride (strided mode only)
    :type stride: int
    :param mode: see MODES
    :type mode: str
    :return: the rulebook
    :rtype: Rulebook
    """
    if mode not in MODES:
        raise ValueError("Unknown rulebook mode: %s" % mode)
    coords = np.asarray(coords, dtype=np.int64).reshape((-1, 4))
    shape = tuple(int(v) for v in spatial_shape)
    keys = linear_keys(coords, shape)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    in_rows = []
    out_rows = []

    if mode == MODE_SUBMANIFOLD:
        if kernel_size % 2 != 1:
            raise ValueError("Submanifold convolution requires an odd kernel size, got: %d" % kernel_size)
        r = kernel_size // 2
        for off in np.ndindex(kernel_size, kernel_size, kernel_size):
            delta = np.asarray(off, dtype=np.int64) - r
            nb = coords[:, 1:] + delta
            inside = np.all((nb >= 0) & (nb < np.asarray(shape)), axis=1)
            out_candidates = np.nonzero(inside)[0]
            nb_coords = np.concatenate([coords[out_candidates, :1], nb[out_candidates]], axis=1)
            found, rows = _lookup(sorted_keys, order, linear_keys(nb_coords, shape))
            in_rows.append(rows)
            out_rows.append(out_candidates[found])
        return Rulebook(kernel_size, mode, in_rows, out_rows, coords.copy(), shape)

    factors = np.asarray(block_factors(shape, stride), dtype=np.int64)
    out_shape = tuple(int(s // f) for s, f in zip(shape, factors))
    down = np.concatenate([coords[:, :1], coords[:, 1:] // factors], axis=1)
    out_keys = np.unique(linear_keys(down, out_shape))
    out_coords = keys_to_coords(out_keys, out_shape)
    out_order = np.arange(len(out_keys))
    kernel = [kernel_size if f > 1 else 1 for f in factors]
    for off in np.ndindex(kernel_size, kernel_size, kernel_size):
        delta = np.asarray(off, dtype=np.int64)
        if np.any(delta >= np.asarray(kernel)):
            in_rows.append(np.zeros(0, dtype=np.int64))
            out_rows.append(np.zeros(0, dtype=np.int64))
            continue
        shifted = coords[:, 1:] - delta
        aligned = np.all((shifted >= 0) & (shifted % factors == 0), axis=1)
        candidates = np.nonzero(aligned)[0]
        target = np.concatenate([coords[candidates, :1], shifted[candidates] // factors], axis=1)
        inside = np.all(target[:, 1:] < np.asarray(out_shape), axis=1)
        candidates = candidates[inside]
        found, rows = _lookup(out_keys, out_order, linear_keys(target[inside], out_shape))
        # sort pairs by output row for deterministic accumulation
        pair_order = np.argsort(rows, kind="stable")
        in_rows.append(candidates[found][pair_order])
        out_rows.append(rows[pair_order])
    return Rulebook(kernel_size, mode, in_rows, out_rows, out_coords, out_shape)


class SparseVoxelTensor:
    """
    Active voxel coordinates (batch, x, y, z) with one feature row each, plus the dense
    spatial shape and the batch size. Coordinates are unique and sorted lexicographically.
    """

    def __init__(self, coords: np.ndarray, features: Tensor, spatial_shape: Sequence[int], batch_size: int,
                 check: bool = True):
        """
        Initializes the tensor.

        :param coords: the Mx4 coordinates
        :type coords: np.ndarray
        :param features: the MxC features
        :type features: Tensor
        :param spatial_shape: the (L, W, H) shape
        :type spatial_shape: tuple
        :param batch_size: the number of samples
        :type batch_size: int
        :param check: whether to validate the invariants
        :type check: bool
        """
        self.coords = np.asarray(coords, dtype=np.int64).reshape((-1, 4))
        self.features = as_tensor(features)
        self.spatial_shape = tuple(int(v) for v in spatial_shape)
        self.batch_size = int(batch_size)
        self._rulebooks = dict()
        if check:
            self.validate()

    def validate(self):
        """
        Checks the invariants, raises a ValueError if violated.
        """
        if self.features.ndim != 2 or len(self.features) != len(self.coords):
            raise ValueError("Expected %d feature rows, got shape: %s" % (len(self.coords), str(self.features.shape)))
        if len(self.coords) == 0:
            return
        if np.any(self.coords < 0) or np.any(self.coords[:, 0] >= self.batch_size) \
                or np.any(self.coords[:, 1:] >= np.asarray(self.spatial_shape)):
            raise ValueError("Coordinates outside of batch %d / shape %s" % (self.batch_size, str(self.spatial_shape)))
        keys = linear_keys(self.coords, self.spatial_shape)
        if np.any(np.diff(keys) <= 0):
            raise ValueError("Coordinates must be unique and sorted!")

    @property
    def num_active(self) -> int:
        return len(self.coords)

    @property
    def num_channels(self) -> int:
        return self.features.shape[1]

    def keys(self) -> np.ndarray:
        return linear_keys(self.coords, self.spatial_shape)

    def rulebook(self, kernel_size: int, stride: int = 1, mode: str = MODE_SUBMANIFOLD) -> Rulebook:
        """
        Returns the (cached) rulebook for these coordinates.

        :param kernel_size: the kernel size
        :type kernel_size: int
        :param stride: the stride
        :type stride: int
        :param mode: the mode
        :type mode: str
        :return: the rulebook
        :rtype: Rulebook
        """
        key = (kernel_size, stride, mode)
        if key not in self._rulebooks:
            self._rulebooks[key] = build_rulebook(self.coords, self.spatial_shape, kernel_size, stride, mode)
        return self._rulebooks[key]

    def with_features(self, features: Tensor) -> 'SparseVoxelTensor':
        """
        Returns a tensor with the same coordinates (and rulebooks) but new features.

        :param features: the new features
        :type features: Tensor
        :return: the new tensor
        :rtype: SparseVoxelTensor
        """
        result = SparseVoxelTensor(self.coords, features, self.spatial_shape, self.batch_size, check=False)
        if len(features) != len(self.coords):
            raise ValueError("Expected %d feature rows, got %d" % (len(self.coords), len(features)))
        result._rulebooks = self._rulebooks
        return result

    def __repr__(self):
        return "SparseVoxelTensor(active=%d, channels=%d, shape=%s, batch=%d)" \
               % (self.num_active, self.num_channels, str(self.spatial_shape), self.batch_size)


def sparse_conv(features: Tensor, weight: Tensor, bias: Optional[Tensor], rulebook: Rulebook) -> Tensor:
    """
    Applies the rulebook: out[j] = bias + sum over offsets o, pairs (i, j) of weight[o] @ x[i].

    :param features: the M x C_in input features
    :type features: Tensor
    :param weight: the C_out x C_in x k x k x k weights
    :type weight: Tensor
    :param bias: the C_out biases, optional
    :type bias: Tensor
    :param rulebook: the rulebook
    :type rulebook: Rulebook
    :return: the output features, one row per rulebook output coordinate
    :rtype: Tensor
    """
    k = rulebook.kernel_size
    if weight.ndim != 5 or weight.shape[2:] != (k, k, k):
        raise ValueError("Expected C_out x C_in x %d^3 weights, got: %s" % (k, str(weight.shape)))
    if features.shape[1] != weight.shape[1]:
        raise ValueError("Channel mismatch: features have %d, weight expects %d" % (features.shape[1], weight.shape[1]))
    c_out, c_in = weight.shape[:2]
    w = weight.data.reshape((c_out, c_in, -1))
    n_out = len(rulebook.out_coords)
    out = np.zeros((n_out, c_out), dtype=np.result_type(features.data, w))
    for o in range(rulebook.num_offsets):
        ins, outs = rulebook.in_rows[o], rulebook.out_rows[o]
        if len(ins) > 0:
            out[outs] += features.data[ins] @ w[:, :, o].T
    if bias is not None:
        out = out + bias.data

    inputs = [features, weight] if bias is None else [features, weight, bias]

    def _backward(g):
        gx = np.zeros_like(features.data)
        gw = np.zeros_like(w)
        for o in range(rulebook.num_offsets):
            ins, outs = rulebook.in_rows[o], rulebook.out_rows[o]
            if len(ins) == 0:
                continue
            go = g[outs]
            gx[ins] += go @ w[:, :, o]
            gw[:, :, o] = go.T @ features.data[ins]
        result = [gx, gw.reshape(weight.shape)]
        if bias is not None:
            result.append(g.sum(axis=0))
        return result

    return make_result("sparse_conv", out, inputs, _backward)


def submanifold_conv3d(x: SparseVoxelTensor, weight: Tensor, bias: Tensor = None) -> SparseVoxelTensor:
    """
    Submanifold 3D convolution: evaluated at the active sites only, the active set is unchanged.

    :param x: the input
    :type x: SparseVoxelTensor
    :param weight: the C_out x C_in x k x k x k weights (k odd)
    :type weight: Tensor
    :param bias: the C_out biases, optional
    :type bias: Tensor
    :return: the output with identical coordinates
    :rtype: SparseVoxelTensor
    """
    if weight.ndim != 5:
        raise ValueError("Expected 5-dim weights, got: %s" % str(weight.shape))
    rb = x.rulebook(weight.shape[2], 1, MODE_SUBMANIFOLD)
    return x.with_features(sparse_conv(x.features, weight, bias, rb))


def scatter_to_dense(features: Tensor, index: Tuple[np.ndarray, ...], shape: Tuple[int, ...]) -> Tensor:
    """
    Writes feature rows into a zero-initialized dense tensor with channels on axis 1.

    :param features: the M x C rows
    :type features: Tensor
    :param index: the (unique) leading-axis indices of each row: (batch, spatial...)
    :type index: tuple
    :param shape: the output shape (B, C, spatial...)
    :type shape: tuple
    :return: the dense tensor
    :rtype: Tensor
    """
    c = features.shape[1]
    channel_last = (shape[0],) + tuple(shape[2:]) + (c,)
    out = np.zeros(channel_last, dtype=features.dtype)
    out[index] = features.data
    out = np.moveaxis(out, -1, 1)

    def _backward(g):
        return [np.moveaxis(g, 1, -1)[index]]

    return make_result("scatter_to_dense", out, [features], _backward)


def sparse_to_dense(x: SparseVoxelTensor) -> Tensor:
    """
    Densifies the tensor to B x C x L x W x H, inactive sites are zero.

    :param x: the sparse tensor
    :type x: SparseVoxelTensor
    :return: the dense tensor
    :rtype: Tensor
    """
    index = tuple(x.coords[:, i] for i in range(4))
    return scatter_to_dense(x.features, index, (x.batch_size, x.num_channels) + x.spatial_shape)


def sparse_norm(x: SparseVoxelTensor, gain: Tensor, shift: Tensor) -> SparseVoxelTensor:
    """
    Per-sample, per-channel normalization over the active voxels.
    """
    return x.with_features(segment_norm(x.features, x.coords[:, 0], x.batch_size, gain, shift))


def sparse_relu(x: SparseVoxelTensor) -> SparseVoxelTensor:
    return x.with_features(relu(x.features))


def sparse_residual_block(x: SparseVoxelTensor, conv1: Tuple[Tensor, Tensor], conv2: Tuple[Tensor, Tensor],
                          norm1: Tuple[Tensor, Tensor], norm2: Tuple[Tensor, Tensor],
                          projection: Tuple[Tensor, Tensor] = None) -> SparseVoxelTensor:
    """
    y = relu(s + conv2(norm2(relu(conv1(norm1(x)))))) with s = x, or the per-voxel linear
    projection of x when the channel count changes. Coordinates are preserved.

    :param x: the input
    :type x: SparseVoxelTensor
    :param conv1: weight, bias of the first submanifold convolution
    :type conv1: tuple
    :param conv2: weight, bias of the second submanifold convolution
    :type conv2: tuple
    :param norm1: gain, shift of the first normalization
    :type norm1: tuple
    :param norm2: gain, shift of the second normalization
    :type norm2: tuple
    :param projection: weight, bias of the shortcut projection, optional
    :type projection: tuple
    :return: the output
    :rtype: SparseVoxelTensor
    """
    h = sparse_norm(x, *norm1)
    h = submanifold_conv3d(h, *conv1)
    h = sparse_relu(h)
    h = sparse_norm(h, *norm2)
    h = submanifold_conv3d(h, *conv2)
    shortcut = x.features if projection is None else linear(x.features, *projection)
    return x.with_features(relu(shortcut + h.features))


def pool_inverse(coords: np.ndarray, spatial_shape: Sequence[int], factors: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, Tuple[int, ...]]:
    """
    Groups the coordinates by their coarse cell coords // factors (per sample).

    :param coords: the Mx4 coordinates
    :type coords: np.ndarray
    :param spatial_shape: the (L, W, H) shape
    :type spatial_shape: tuple
    :param factors: the per-axis cell size
    :type factors: tuple
    :return: the distinct coarse keys (sorted), the group of each coordinate, the coarse shape
    :rtype: tuple
    """
    factors = np.asarray(factors, dtype=np.int64)
    coarse_shape = tuple(int(-(-s // f)) for s, f in zip(spatial_shape, factors))
    coarse = np.concatenate([coords[:, :1], coords[:, 1:] // factors], axis=1)
    unique, inverse = group_keys(linear_keys(coarse, coarse_shape))
    return unique, inverse, coarse_shape


def sgfe_downscale(x: SparseVoxelTensor, branches: Sequence[Tuple[Tensor, Tensor]], score: Tuple[Tensor, Tensor],
                   return_attention: bool = False):
    """
    Geometry feature enhancement followed by factor-2 downscaling:
    (1) for each scale r in (1, 2, 4) the voxel features are averaged over cells of r^3 voxels,
        gathered back to the voxels and passed through the branch's linear layer;
    (2) a linear scoring head over the concatenated branches yields one logit per branch, a softmax
        over the branches turns them into attention weights; the weighted branches are added to x;
    (3) the enhanced features are max-pooled over cells of 2^3 voxels (axes of extent 1 stay).

    :param x: the input
    :type x: SparseVoxelTensor
    :param branches: weight, bias of the linear layer per scale (C -> C)
    :type branches: list
    :param score: weight, bias of the scoring head (3C -> 3)
    :type score: tuple
    :param return_attention: whether to return the M x 3 attention weights as well
    :type return_attention: bool
    :return: the downscaled tensor (and the attention weights)
    """
    if len(branches) != len(SGFE_SCALES):
        raise ValueError("Expected %d branches, got %d" % (len(SGFE_SCALES), len(branches)))
    down_factors = block_factors(x.spatial_shape, 2)

    outputs = []
    for r, (w, b) in zip(SGFE_SCALES, branches):
        factors = [min(r, s) for s in x.spatial_shape]
        unique, inverse, _ = pool_inverse(x.coords, x.spatial_shape, factors)
        pooled = scatter_reduce(x.features, inverse, len(unique), REDUCE_MEAN)
        outputs.append(linear(pooled[inverse], w, b))

    attention = softmax(linear(concat(outputs, axis=1), *score), axis=1)
    enhanced = x.features
    for i, branch in enumerate(outputs):
        enhanced = enhanced + attention[:, i:i + 1] * branch

    unique, inverse, coarse_shape = pool_inverse(x.coords, x.spatial_shape, down_factors)
    pooled = scatter_reduce(enhanced, inverse, len(unique), REDUCE_MAX)
    result = SparseVoxelTensor(keys_to_coords(unique, coarse_shape), pooled, coarse_shape, x.batch_size, check=False)
    if return_attention:
        return result, attention
    return result


def bev_project_sparse(x: SparseVoxelTensor) -> Tensor:
    """
    Max-pools the features of each (batch, x, y) column and writes them into a dense
    B x C x L x W map; empty columns are zero.

    :param x: the sparse tensor
    :type x: SparseVoxelTensor
    :return: the bird's-eye-view map
    :rtype: Tensor
    """
    lx, ly, _ = x.spatial_shape
    keys = (x.coords[:, 0] * lx + x.coords[:, 1]) * ly + x.coords[:, 2]
    unique, inverse = group_keys(keys)
    pooled = scatter_reduce(x.features, inverse, len(unique), REDUCE_MAX)
    index = (unique // (lx * ly), (unique // ly) % lx, unique % ly)
    return scatter_to_dense(pooled, index, (x.batch_size, x.num_channels, lx, ly))
