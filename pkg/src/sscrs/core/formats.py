import csv
import os
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .config import REMAP_SEMANTICKITTI, REMAP_SYNTHETIC
from .errors import DataError
from .grid import LabelGrid, PointCloud

EXT_POINTS = ".bin"
EXT_LABEL = ".label"
EXT_INVALID = ".invalid"
EXT_OCCUPANCY = ".bin"

POINT_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u2")

SEMANTICKITTI_LEARNING_MAP = {
    0: 0, 1: 0, 10: 1, 11: 2, 13: 5, 15: 3, 16: 5, 18: 4, 20: 5, 30: 6, 31: 7, 32: 8, 40: 9, 44: 10,
    48: 11, 49: 12, 50: 13, 51: 14, 52: 0, 60: 9, 70: 15, 71: 16, 72: 17, 80: 18, 81: 19, 99: 0,
    252: 1, 253: 7, 254: 6, 255: 8, 256: 5, 257: 5, 258: 4, 259: 5,
}

SEMANTICKITTI_LEARNING_MAP_INV = {
    0: 0, 1: 10, 2: 11, 3: 15, 4: 18, 5: 20, 6: 30, 7: 31, 8: 32, 9: 40, 10: 44, 11: 48, 12: 49,
    13: 50, 14: 51, 15: 70, 16: 71, 17: 72, 18: 80, 19: 81,
}

SEMANTICKITTI_CLASS_NAMES = [
    "empty", "car", "bicycle", "motorcycle", "truck", "other-vehicle", "person", "bicyclist",
    "motorcyclist", "road", "parking", "sidewalk", "other-ground", "building", "fence", "vegetation",
    "trunk", "terrain", "pole", "traffic-sign",
]


class RemapTable:
    """
    Maps raw label ids from files onto training classes 0..C_n and back.
    """

    def __init__(self, name: str, forward: Dict[int, int], inverse: Dict[int, int], class_names: List[str]):
        self.name = name
        self.forward = dict(forward)
        self.inverse = dict(inverse)
        self.class_names = list(class_names)
        self._lut = np.full(1 << 16, -1, dtype=np.int32)
        for k, v in self.forward.items():
            self._lut[k] = v
        self._inv_lut = np.full(256, -1, dtype=np.int32)
        for k, v in self.inverse.items():
            self._inv_lut[k] = v

    @property
    def num_classes(self) -> int:
        return len(self.class_names) - 1

    def apply(self, raw: np.ndarray) -> np.ndarray:
        """
        Maps raw ids to classes.

        :param raw: the raw ids
        :type raw: np.ndarray
        :return: the uint8 classes
        :rtype: np.ndarray
        """
        mapped = self._lut[np.asarray(raw, dtype=np.int64)]
        if np.any(mapped < 0):
            raise DataError("Unmapped label ids (table '%s'): %s"
                            % (self.name, ", ".join(str(x) for x in np.unique(np.asarray(raw)[mapped < 0]))))
        return mapped.astype(np.uint8)

    def apply_inverse(self, classes: np.ndarray) -> np.ndarray:
        """
        Maps classes back to raw ids.

        :param classes: the classes
        :type classes: np.ndarray
        :return: the uint16 raw ids
        :rtype: np.ndarray
        """
        mapped = self._inv_lut[np.asarray(classes, dtype=np.int64)]
        if np.any(mapped < 0):
            raise DataError("Classes without inverse mapping (table '%s'): %s"
                            % (self.name, ", ".join(str(x) for x in np.unique(np.asarray(classes)[mapped < 0]))))
        return mapped.astype(np.uint16)


def get_remap(name: str) -> RemapTable:
    """
    Returns the remap table.

    :param name: semantickitti|synthetic
    :type name: str
    :return: the table
    :rtype: RemapTable
    """
    if name == REMAP_SEMANTICKITTI:
        return RemapTable(name, SEMANTICKITTI_LEARNING_MAP, SEMANTICKITTI_LEARNING_MAP_INV, SEMANTICKITTI_CLASS_NAMES)
    if name == REMAP_SYNTHETIC:
        identity = {i: i for i in range(len(SEMANTICKITTI_CLASS_NAMES))}
        return RemapTable(name, identity, identity, SEMANTICKITTI_CLASS_NAMES)
    raise DataError("Unknown remap table: %s" % name)


def companion_path(path: str, ext: str) -> str:
    return os.path.splitext(path)[0] + ext


def _read_bytes(path: str) -> bytes:
    if not os.path.isfile(path):
        raise DataError("File does not exist: %s" % path)
    with open(path, "rb") as f:
        return f.read()


def read_points(path: str) -> PointCloud:
    """
    Reads little-endian float32 quadruples (x, y, z, intensity).

    :param path: the file to read
    :type path: str
    :return: the points
    :rtype: PointCloud
    """
    data = _read_bytes(path)
    if len(data) % 16 != 0:
        raise DataError("Point file size %d is not a multiple of 16 bytes: %s" % (len(data), path))
    values = np.frombuffer(data, dtype=POINT_DTYPE).reshape((-1, 4))
    try:
        return PointCloud(values[:, :3].copy(), values[:, 3].copy())
    except ValueError as e:
        raise DataError("Invalid points in %s: %s" % (path, str(e)))


def write_points(points: PointCloud, path: str):
    values = np.concatenate([points.positions, points.intensity[:, None]], axis=1).astype(POINT_DTYPE)
    with open(path, "wb") as f:
        f.write(values.tobytes())


def unpack_bits(data: bytes, expected_count: int) -> np.ndarray:
    """
    Expands every byte into 8 flags, most significant bit first.

    :param data: the packed bytes
    :type data: bytes
    :param expected_count: the number of flags
    :type expected_count: int
    :return: the boolean flags
    :rtype: np.ndarray
    """
    expected_bytes = (expected_count + 7) // 8
    if len(data) != expected_bytes:
        raise DataError("Expected %d bytes for %d packed bits, got %d" % (expected_bytes, expected_count, len(data)))
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:expected_count].astype(bool)


def pack_bits(flags: np.ndarray) -> bytes:
    return np.packbits(np.asarray(flags, dtype=bool).reshape((-1,))).tobytes()


def read_packed_bits(path: str, expected_count: int) -> np.ndarray:
    return unpack_bits(_read_bytes(path), expected_count)


def write_packed_bits(flags: np.ndarray, path: str):
    with open(path, "wb") as f:
        f.write(pack_bits(flags))


def read_occupancy(path: str, dims: Sequence[int]) -> np.ndarray:
    """
    Reads a packed occupancy grid (x-major, then y, then z).

    :param path: the file
    :type path: str
    :param dims: the grid dims (L, W, H)
    :type dims: tuple
    :return: the boolean grid
    :rtype: np.ndarray
    """
    dims = tuple(int(d) for d in dims)
    return read_packed_bits(path, int(np.prod(dims))).reshape(dims)


def write_occupancy(occ: np.ndarray, path: str):
    write_packed_bits(occ, path)


def read_voxel_labels(path: str, remap: RemapTable, dims: Sequence[int]) -> LabelGrid:
    """
    Reads little-endian uint16 label ids (x-major, then y, then z), remapped to classes. The
    invalid mask is read from the companion '.invalid' file, if present.

    :param path: the label file
    :type path: str
    :param remap: the table to apply
    :type remap: RemapTable
    :param dims: the grid dims (L, W, H)
    :type dims: tuple
    :return: the grid
    :rtype: LabelGrid
    """
    dims = tuple(int(d) for d in dims)
    count = int(np.prod(dims))
    data = _read_bytes(path)
    if len(data) != 2 * count:
        raise DataError("Expected %d bytes of labels for grid %s, got %d: %s" % (2 * count, str(dims), len(data), path))
    labels = remap.apply(np.frombuffer(data, dtype=LABEL_DTYPE)).reshape(dims)
    invalid = None
    invalid_path = companion_path(path, EXT_INVALID)
    if os.path.isfile(invalid_path):
        invalid = read_packed_bits(invalid_path, count).reshape(dims)
    return LabelGrid(labels, invalid)


def write_voxel_labels(grid: LabelGrid, path: str, remap: RemapTable, write_invalid: bool = True):
    """
    Writes the grid as uint16 label ids (inverse remap) plus the packed invalid mask.

    :param grid: the grid to write
    :type grid: LabelGrid
    :param path: the label file
    :type path: str
    :param remap: the table to invert
    :type remap: RemapTable
    :param write_invalid: whether to write the companion '.invalid' file
    :type write_invalid: bool
    """
    raw = remap.apply_inverse(grid.labels).astype(LABEL_DTYPE)
    with open(path, "wb") as f:
        f.write(raw.reshape((-1,)).tobytes())
    if write_invalid:
        write_packed_bits(grid.invalid, companion_path(path, EXT_INVALID))


def write_predictions(grid: LabelGrid, path: str, remap: RemapTable):
    write_voxel_labels(grid, path, remap, write_invalid=False)


def export_csv(grid: LabelGrid, path: str) -> int:
    """
    Writes the (x, y, z, class) voxel indices of all occupied voxels, with header.

    :param grid: the grid to export
    :type grid: LabelGrid
    :param path: the CSV file
    :type path: str
    :return: the number of rows written
    :rtype: int
    """
    indices = np.argwhere(grid.labels > 0)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "z", "class"])
        for x, y, z in indices:
            writer.writerow([int(x), int(y), int(z), int(grid.labels[x, y, z])])
    return len(indices)


def read_csv(path: str) -> List[Tuple[int, int, int, int]]:
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        next(reader, None)
        return [tuple(int(v) for v in row) for row in reader if len(row) > 0]
