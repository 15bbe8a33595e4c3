import json
import os
from dataclasses import dataclass
from typing import Iterator, List, Sequence

import numpy as np
from coed.logging import LoggableObject

from .errors import DataError
from .formats import (EXT_LABEL, EXT_OCCUPANCY, EXT_POINTS, RemapTable, get_remap, read_occupancy,
                      read_points, read_voxel_labels, write_occupancy, write_points, write_voxel_labels)
from .grid import LabelGrid, PointCloud, VoxelGridSpec, random_flip, voxelize
from .losses import MultiScaleTargets
from .performance import ordered_map

MANIFEST = "manifest.json"
DIR_POINTS = "velodyne"
DIR_VOXELS = "voxels"
MANIFEST_VERSION = 1


@dataclass
class SceneSample:
    """
    One scene: the point cloud, its voxel footprint and the ground truth.
    """

    points: PointCloud
    input_occupancy: np.ndarray
    gt: LabelGrid
    id: str

    def flipped(self, spec: VoxelGridSpec, rng_seed: int) -> 'SceneSample':
        """
        Returns a randomly x/y mirrored copy (reproducible for the seed).

        :param spec: the grid
        :type spec: VoxelGridSpec
        :param rng_seed: the seed
        :type rng_seed: int
        :return: the copy
        :rtype: SceneSample
        """
        points, (occ, gt) = random_flip(self.points, [self.input_occupancy, self.gt], spec, rng_seed)
        return SceneSample(points, occ, gt, self.id)


def footprint(points: PointCloud, spec: VoxelGridSpec) -> np.ndarray:
    """
    Returns the voxels that contain at least one point.

    :param points: the points
    :type points: PointCloud
    :param spec: the grid
    :type spec: VoxelGridSpec
    :return: the L x W x H boolean grid
    :rtype: np.ndarray
    """
    occ = np.zeros(spec.dims, dtype=bool)
    indices, _ = voxelize(points, spec)
    occ[indices[:, 0], indices[:, 1], indices[:, 2]] = True
    return occ


def scene_paths(directory: str, scene_id: str) -> dict:
    return {
        "points": os.path.join(directory, DIR_POINTS, scene_id + EXT_POINTS),
        "occupancy": os.path.join(directory, DIR_VOXELS, scene_id + EXT_OCCUPANCY),
        "labels": os.path.join(directory, DIR_VOXELS, scene_id + EXT_LABEL),
    }


def write_scene(sample: SceneSample, directory: str, remap: RemapTable):
    """
    Writes the scene in the dataset layout (velodyne/<id>.bin, voxels/<id>.bin|.label|.invalid).

    :param sample: the scene
    :type sample: SceneSample
    :param directory: the dataset directory
    :type directory: str
    :param remap: the table for the label ids
    :type remap: RemapTable
    """
    paths = scene_paths(directory, sample.id)
    os.makedirs(os.path.dirname(paths["points"]), exist_ok=True)
    os.makedirs(os.path.dirname(paths["labels"]), exist_ok=True)
    write_points(sample.points, paths["points"])
    write_occupancy(sample.input_occupancy, paths["occupancy"])
    write_voxel_labels(sample.gt, paths["labels"], remap)


def read_scene(directory: str, scene_id: str, spec: VoxelGridSpec, remap: RemapTable) -> SceneSample:
    paths = scene_paths(directory, scene_id)
    return SceneSample(
        read_points(paths["points"]),
        read_occupancy(paths["occupancy"], spec.dims),
        read_voxel_labels(paths["labels"], remap, spec.dims),
        scene_id)


def write_manifest(directory: str, ids: Sequence[str], spec: VoxelGridSpec, remap: str):
    d = {
        "version": MANIFEST_VERSION,
        "grid": {"origin": list(spec.origin), "voxel_size": spec.voxel_size, "dims": list(spec.dims)},
        "remap": remap,
        "scenes": list(ids),
    }
    with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8") as f:
        json.dump(d, f, indent=2, sort_keys=True)


def read_manifest(directory: str) -> dict:
    """
    Reads and checks the manifest of the dataset directory.

    :param directory: the dataset directory
    :type directory: str
    :return: the manifest content
    :rtype: dict
    """
    path = os.path.join(directory, MANIFEST)
    if not os.path.isfile(path):
        raise DataError("No %s in directory: %s" % (MANIFEST, directory))
    try:
        with open(path, "r", encoding="utf-8") as f:
            d = json.load(f)
    except ValueError as e:
        raise DataError("Malformed manifest %s: %s" % (path, str(e)))
    for key in ["version", "grid", "remap", "scenes"]:
        if key not in d:
            raise DataError("Manifest %s lacks key: %s" % (path, key))
    if d["version"] != MANIFEST_VERSION:
        raise DataError("Unsupported manifest version: %s" % str(d["version"]))
    return d


class SceneDataset(LoggableObject):
    """
    The scenes of a dataset directory, in manifest order. Scenes are read by parallel
    workers; the multi-scale targets are derived per batch.
    """

    def __init__(self, directory: str, spec: VoxelGridSpec = None, num_threads: int = 1):
        """
        Initializes the dataset.

        :param directory: the dataset directory
        :type directory: str
        :param spec: the grid the scenes must use, None to accept the manifest's grid
        :type spec: VoxelGridSpec
        :param num_threads: the number of reader threads, see actual_num_threads
        :type num_threads: int
        """
        super().__init__()
        self.directory = directory
        manifest = read_manifest(directory)
        g = manifest["grid"]
        manifest_spec = VoxelGridSpec(tuple(g["origin"]), g["voxel_size"], tuple(g["dims"]))
        if spec is not None and spec != manifest_spec:
            raise DataError("Grid of dataset %s (%s) differs from configured grid (%s)"
                            % (directory, str(manifest_spec), str(spec)))
        self.spec = manifest_spec
        self.remap = get_remap(manifest["remap"])
        self.ids = list(manifest["scenes"])
        self.num_threads = num_threads
        self._cache = None

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, index: int) -> SceneSample:
        return read_scene(self.directory, self.ids[index], self.spec, self.remap)

    def load_all(self) -> List[SceneSample]:
        """
        Reads all scenes (once), preserving the manifest order.

        :return: the scenes
        :rtype: list
        """
        if self._cache is None:
            self._cache = ordered_map(self.__getitem__, list(range(len(self))), num_threads=self.num_threads)
            self.log("Loaded %d scenes from %s" % (len(self._cache), self.directory))
        return self._cache

    def batches(self, batch_size: int) -> Iterator[List[SceneSample]]:
        samples = self.load_all()
        for i in range(0, len(samples), batch_size):
            yield samples[i:i + batch_size]


@dataclass
class Batch:
    """
    Collated scenes: the model inputs plus the targets.
    """

    points: List[PointCloud]
    occupancy: np.ndarray
    targets: MultiScaleTargets
    ids: List[str]

    @classmethod
    def collate(cls, samples: Sequence[SceneSample]) -> 'Batch':
        if len(samples) == 0:
            raise DataError("Cannot collate an empty batch!")
        return cls(
            [s.points for s in samples],
            np.stack([np.asarray(s.input_occupancy, dtype=bool) for s in samples]),
            MultiScaleTargets.from_grids([s.gt for s in samples]),
            [s.id for s in samples])
