from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np

REDUCE_MAX = "max"
REDUCE_MEAN = "mean"
REDUCE_SUM = "sum"

REDUCTIONS = [
    REDUCE_MAX,
    REDUCE_MEAN,
    REDUCE_SUM,
]

NUM_POINT_FEATURES = 7
""" x, y, z, offset from voxel center (3), intensity """


@dataclass(frozen=True)
class VoxelGridSpec:
    """
    Maps metric coordinates onto voxel indices: minimum corner, voxel edge length (meters)
    and number of voxels per axis (L, W, H).
    """

    origin: Tuple[float, float, float] = (0.0, -25.6, -2.0)
    voxel_size: float = 0.2
    dims: Tuple[int, int, int] = (256, 256, 32)

    def __post_init__(self):
        if len(self.origin) != 3 or len(self.dims) != 3:
            raise ValueError("Grid origin and dims must have 3 components: %s, %s" % (str(self.origin), str(self.dims)))
        if not self.voxel_size > 0:
            raise ValueError("Voxel size must be positive: %s" % str(self.voxel_size))
        for d in self.dims:
            if int(d) < 1:
                raise ValueError("All grid dims must be at least 1: %s" % str(self.dims))
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "dims", tuple(int(x) for x in self.dims))

    @classmethod
    def full_scale(cls) -> 'VoxelGridSpec':
        """
        The benchmark grid: 256x256x32 voxels of 0.2m, x in [0, 51.2), y in [-25.6, 25.6), z in [-2, 4.4).

        :return: the spec
        :rtype: VoxelGridSpec
        """
        return cls((0.0, -25.6, -2.0), 0.2, (256, 256, 32))

    @classmethod
    def desk(cls) -> 'VoxelGridSpec':
        """
        The default desk-scale grid: 64x64x8 voxels of 0.2m, centered on the sensor in y.

        :return: the spec
        :rtype: VoxelGridSpec
        """
        return cls((0.0, -6.4, -2.0), 0.2, (64, 64, 8))

    @property
    def extent(self) -> np.ndarray:
        """
        Returns the metric extent per axis.

        :return: the extent (meters)
        :rtype: np.ndarray
        """
        return np.asarray(self.dims, dtype=np.float64) * self.voxel_size

    @property
    def num_voxels(self) -> int:
        return int(np.prod(self.dims))

    def voxel_centers(self, indices: np.ndarray) -> np.ndarray:
        """
        Returns the metric centers of the voxels.

        :param indices: the Nx3 voxel indices
        :type indices: np.ndarray
        :return: the Nx3 centers
        :rtype: np.ndarray
        """
        return np.asarray(self.origin) + (np.asarray(indices, dtype=np.float64) + 0.5) * self.voxel_size

    def downscaled(self, factor: int = 2) -> 'VoxelGridSpec':
        """
        Returns the spec of the grid at 1/factor resolution.

        :param factor: the downscaling factor
        :type factor: int
        :return: the coarser spec
        :rtype: VoxelGridSpec
        """
        factors = block_factors(self.dims, factor)
        dims = tuple(d // f for d, f in zip(self.dims, factors))
        return VoxelGridSpec(self.origin, self.voxel_size * factor, dims)


@dataclass
class PointCloud:
    """
    Nx3 positions (meters) plus N intensities in [0, 1].
    """

    positions: np.ndarray
    intensity: np.ndarray = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float32).reshape((-1, 3))
        if self.intensity is None:
            self.intensity = np.zeros(len(self.positions), dtype=np.float32)
        self.intensity = np.asarray(self.intensity, dtype=np.float32).reshape((-1,))
        if len(self.intensity) != len(self.positions):
            raise ValueError("Number of intensities differs from number of points: %d != %d"
                             % (len(self.intensity), len(self.positions)))
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("Point coordinates must be finite!")

    def __len__(self):
        return len(self.positions)

    def copy(self) -> 'PointCloud':
        return PointCloud(self.positions.copy(), self.intensity.copy())


@dataclass
class LabelGrid:
    """
    Per-voxel class ids (0 = empty, 1..C_n = semantic) plus the mask of voxels excluded
    from losses and evaluation.
    """

    labels: np.ndarray
    invalid: np.ndarray = field(default=None)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 3:
            raise ValueError("Label grid must be 3-dimensional, got shape: %s" % str(self.labels.shape))
        if self.invalid is None:
            self.invalid = np.zeros(self.labels.shape, dtype=bool)
        self.invalid = np.asarray(self.invalid, dtype=bool)
        if self.invalid.shape != self.labels.shape:
            raise ValueError("Invalid mask shape %s differs from label shape %s"
                             % (str(self.invalid.shape), str(self.labels.shape)))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.labels.shape)

    @property
    def occupancy(self) -> np.ndarray:
        """
        Returns the voxels that carry a (non-empty) class.

        :return: the boolean grid
        :rtype: np.ndarray
        """
        return self.labels > 0

    def copy(self) -> 'LabelGrid':
        return LabelGrid(self.labels.copy(), self.invalid.copy())


def block_factors(dims: Sequence[int], factor: int = 2) -> Tuple[int, ...]:
    """
    Determines the per-axis downscaling factors. Axes of extent 1 stay at extent 1,
    all others must be divisible by the factor.

    :param dims: the grid dimensions
    :type dims: list
    :param factor: the factor to apply
    :type factor: int
    :return: the per-axis factors
    :rtype: tuple
    """
    result = []
    for d in dims:
        if d == 1:
            result.append(1)
        elif d % factor != 0:
            raise ValueError("Dimensions %s not divisible by %d" % (str(tuple(dims)), factor))
        else:
            result.append(factor)
    return tuple(result)


def voxelize(points: PointCloud, spec: VoxelGridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Computes the voxel index of each point, using half-open bins [origin + i*s, origin + (i+1)*s).

    :param points: the points to voxelize
    :type points: PointCloud
    :param spec: the grid to use
    :type spec: VoxelGridSpec
    :return: the Kx3 indices of the K in-range points (int64), the N in-range flags
    :rtype: tuple
    """
    pos = np.asarray(points.positions, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        scaled = np.floor((pos - np.asarray(spec.origin)) / spec.voxel_size)
    mask = np.all(np.isfinite(scaled), axis=1)
    mask &= np.all(scaled >= 0, axis=1) & np.all(scaled < np.asarray(spec.dims), axis=1)
    return scaled[mask].astype(np.int64), mask


def build_point_features(points: PointCloud, spec: VoxelGridSpec) -> np.ndarray:
    """
    Generates the per-point features [x, y, z, dx, dy, dz, intensity] with (dx, dy, dz)
    the offset from the center of the point's voxel. Out-of-range points are dropped.

    :param points: the points
    :type points: PointCloud
    :param spec: the grid
    :type spec: VoxelGridSpec
    :return: the Kx7 features of the in-range points (float64)
    :rtype: np.ndarray
    """
    indices, mask = voxelize(points, spec)
    pos = np.asarray(points.positions, dtype=np.float64)[mask]
    offsets = pos - spec.voxel_centers(indices)
    intensity = np.asarray(points.intensity, dtype=np.float64)[mask][:, None]
    return np.concatenate([pos, offsets, intensity], axis=1)


def group_keys(keys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Groups the keys: the distinct keys in ascending order plus each key's group.

    :param keys: the integer keys
    :type keys: np.ndarray
    :return: unique keys, inverse index
    :rtype: tuple
    """
    keys = np.asarray(keys, dtype=np.int64).reshape((-1,))
    unique, inverse = np.unique(keys, return_inverse=True)
    return unique, inverse.reshape((-1,))


def scatter_reduce(features: np.ndarray, keys: np.ndarray, reduce: str = REDUCE_MAX) -> Tuple[np.ndarray, np.ndarray]:
    """
    Reduces all rows sharing a key into a single row, output ordered by ascending key.
    Accumulation happens in input row order.

    :param features: the MxC features
    :type features: np.ndarray
    :param keys: the M non-negative keys
    :type keys: np.ndarray
    :param reduce: the reduction, see REDUCTIONS
    :type reduce: str
    :return: the U unique keys, the UxC reduced features
    :rtype: tuple
    """
    if reduce not in REDUCTIONS:
        raise ValueError("Unknown reduction: %s" % reduce)
    features = np.asarray(features)
    keys = np.asarray(keys, dtype=np.int64).reshape((-1,))
    if features.ndim != 2 or len(features) != len(keys):
        raise ValueError("Expected MxC features and M keys, got %s and %s" % (str(features.shape), str(keys.shape)))
    if np.any(keys < 0):
        raise ValueError("Keys must be non-negative!")
    if len(keys) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, features.shape[1]), dtype=features.dtype)
    unique, inverse = group_keys(keys)
    if reduce == REDUCE_MAX:
        out = np.full((len(unique), features.shape[1]), -np.inf, dtype=features.dtype)
        np.maximum.at(out, inverse, features)
    else:
        out = np.zeros((len(unique), features.shape[1]), dtype=features.dtype)
        np.add.at(out, inverse, features)
        if reduce == REDUCE_MEAN:
            counts = np.bincount(inverse, minlength=len(unique))
            out = out / counts[:, None].astype(features.dtype)
    return unique, out


def _blocks(a: np.ndarray, factors: Sequence[int]) -> np.ndarray:
    """
    Rearranges the 3D array into (L', W', H', block) with the block voxels last.
    """
    fx, fy, fz = factors
    lx, ly, lz = a.shape
    b = a.reshape((lx // fx, fx, ly // fy, fy, lz // fz, fz))
    b = b.transpose((0, 2, 4, 1, 3, 5))
    return b.reshape((lx // fx, ly // fy, lz // fz, fx * fy * fz))


def downsample_labels(grid: LabelGrid, factor: int = 2) -> LabelGrid:
    """
    Halves the resolution of the label grid. Each coarse voxel gets the majority class
    among the valid non-empty voxels of its block (ties go to the smallest class id), 0
    for all-empty blocks. A coarse voxel is invalid if its non-empty voxels are all invalid
    (or, for all-empty blocks, if every voxel is invalid).

    :param grid: the grid to downsample
    :type grid: LabelGrid
    :param factor: the factor
    :type factor: int
    :return: the coarser grid
    :rtype: LabelGrid
    """
    factors = block_factors(grid.dims, factor)
    labels = _blocks(grid.labels, factors)
    invalid = _blocks(grid.invalid, factors)
    non_empty = labels > 0
    valid = non_empty & ~invalid

    out = np.zeros(labels.shape[:3], dtype=np.uint8)
    best = np.zeros(labels.shape[:3], dtype=np.int64)
    best_fallback = np.zeros(labels.shape[:3], dtype=np.int64)
    fallback = np.zeros(labels.shape[:3], dtype=np.uint8)
    for c in np.unique(labels[non_empty]):
        # ascending class order with strict '>' keeps the smallest id on ties
        count = np.sum(valid & (labels == c), axis=-1)
        update = count > best
        out[update] = c
        best[update] = count[update]
        count = np.sum(non_empty & (labels == c), axis=-1)
        update = count > best_fallback
        fallback[update] = c
        best_fallback[update] = count[update]

    any_non_empty = np.any(non_empty, axis=-1)
    no_valid = best == 0
    out[no_valid & any_non_empty] = fallback[no_valid & any_non_empty]
    out_invalid = np.where(any_non_empty, no_valid, np.all(invalid, axis=-1))
    return LabelGrid(out, out_invalid)


def downsample_occupancy(occ: np.ndarray, factor: int = 2) -> np.ndarray:
    """
    Halves the resolution of the occupancy grid, a coarse voxel is occupied if any of its
    block is.

    :param occ: the boolean grid
    :type occ: np.ndarray
    :param factor: the factor
    :type factor: int
    :return: the coarser grid
    :rtype: np.ndarray
    """
    occ = np.asarray(occ, dtype=bool)
    return np.any(_blocks(occ, block_factors(occ.shape, factor)), axis=-1)


def downsample_invalid(invalid: np.ndarray, factor: int = 2) -> np.ndarray:
    """
    Halves the resolution of an invalid mask, a coarse voxel is invalid only if its
    entire block is.

    :param invalid: the boolean grid
    :type invalid: np.ndarray
    :param factor: the factor
    :type factor: int
    :return: the coarser grid
    :rtype: np.ndarray
    """
    invalid = np.asarray(invalid, dtype=bool)
    return np.all(_blocks(invalid, block_factors(invalid.shape, factor)), axis=-1)


def bev_key(index: Union[Sequence[int], np.ndarray], spec: VoxelGridSpec) -> Union[int, np.ndarray]:
    """
    Returns the bird's-eye-view key x * W + y of the voxel index (z is dropped).

    :param index: a single (x, y, z) index or Nx3 indices
    :param spec: the grid
    :type spec: VoxelGridSpec
    :return: the key(s)
    """
    a = np.asarray(index, dtype=np.int64)
    keys = a[..., 0] * spec.dims[1] + a[..., 1]
    if a.ndim == 1:
        return int(keys)
    return keys


def flip_flags(rng_seed: int) -> Tuple[bool, bool]:
    """
    Draws the x and y flip decisions, each with probability 0.5.

    :param rng_seed: the seed
    :type rng_seed: int
    :return: flip x, flip y
    :rtype: tuple
    """
    rng = np.random.default_rng(rng_seed)
    draws = rng.random(2)
    return bool(draws[0] < 0.5), bool(draws[1] < 0.5)


def _mirror_axis(values: np.ndarray, origin: float, voxel_size: float, count: int) -> np.ndarray:
    """
    Mirrors float32 coordinates about the axis' mid-plane so that a point in voxel i ends up
    in voxel count-1-i and out-of-range points stay out of range (bins are half-open).

    :param values: the coordinates
    :type values: np.ndarray
    :param origin: the minimum of the axis
    :type origin: float
    :param voxel_size: the voxel edge length
    :type voxel_size: float
    :param count: the voxels along the axis
    :type count: int
    :return: the mirrored float32 coordinates
    :rtype: np.ndarray
    """
    values = np.asarray(values, dtype=np.float32)
    before = np.floor((values.astype(np.float64) - origin) / voxel_size)
    inside = (before >= 0) & (before < count)
    expected = count - 1 - before
    result = (2.0 * origin + count * voxel_size - values.astype(np.float64)).astype(np.float32)
    for _ in range(4):
        after = np.floor((result.astype(np.float64) - origin) / voxel_size)
        wrong = np.where(inside, after != expected, (after >= 0) & (after < count))
        if not np.any(wrong):
            break
        down = np.where(inside, after > expected, after < count / 2.0)
        target = np.where(down[wrong], -np.inf, np.inf).astype(np.float32)
        result[wrong] = np.nextafter(result[wrong], target)
    return result


def apply_flip(points: PointCloud, grids: List, spec: VoxelGridSpec, flip_x: bool, flip_y: bool) -> Tuple[PointCloud, List]:
    """
    Mirrors points about the grid's x and/or y mid-planes and the grids along the matching axes.

    :param points: the points, can be None
    :type points: PointCloud
    :param grids: the LabelGrid objects or boolean/label arrays with (L, W, ...) leading axes
    :type grids: list
    :param spec: the grid
    :type spec: VoxelGridSpec
    :param flip_x: whether to mirror x
    :type flip_x: bool
    :param flip_y: whether to mirror y
    :type flip_y: bool
    :return: the flipped copies
    :rtype: tuple
    """
    axes = [a for a, f in ((0, flip_x), (1, flip_y)) if f]

    result_points = None
    if points is not None:
        pos = np.asarray(points.positions, dtype=np.float32).copy()
        for a in axes:
            pos[:, a] = _mirror_axis(pos[:, a], spec.origin[a], spec.voxel_size, spec.dims[a])
        result_points = PointCloud(pos, points.intensity.copy())

    result_grids = []
    for g in grids:
        if isinstance(g, LabelGrid):
            labels, invalid = g.labels, g.invalid
            for a in axes:
                labels = np.flip(labels, axis=a)
                invalid = np.flip(invalid, axis=a)
            result_grids.append(LabelGrid(labels.copy(), invalid.copy()))
        else:
            a_grid = np.asarray(g)
            for a in axes:
                a_grid = np.flip(a_grid, axis=a)
            result_grids.append(a_grid.copy())

    return result_points, result_grids


def random_flip(points: PointCloud, grids: List, spec: VoxelGridSpec, rng_seed: int) -> Tuple[PointCloud, List]:
    """
    Randomly mirrors the scene in x and/or y (independently, probability 0.5 each).
    Reproducible for a given seed.

    :param points: the points
    :type points: PointCloud
    :param grids: the grids to transform consistently
    :type grids: list
    :param spec: the grid
    :type spec: VoxelGridSpec
    :param rng_seed: the seed
    :type rng_seed: int
    :return: the flipped copies
    :rtype: tuple
    """
    flip_x, flip_y = flip_flags(rng_seed)
    return apply_flip(points, grids, spec, flip_x, flip_y)
