from typing import Tuple

import numpy as np

from .config import SynthConfig
from .dataset import SceneSample, footprint
from .grid import LabelGrid, PointCloud, VoxelGridSpec

CLASS_GROUND = 9
CLASS_BOX_A = 1
CLASS_BOX_B = 13
CLASS_POLE = 18

SYNTHETIC_CLASSES = [CLASS_GROUND, CLASS_BOX_A, CLASS_BOX_B, CLASS_POLE]

STEP_FRACTION = 0.25
""" ray marching step as fraction of the voxel size """

MARGIN_FRACTION = 1e-3
""" keeps jittered points away from the voxel faces """


def scene_id(seed: int) -> str:
    return "%06d" % seed


def sensor_position(spec: VoxelGridSpec, config: SynthConfig) -> np.ndarray:
    """
    Returns the sensor position: the configured one or (grid x-min, grid center y, top of the
    ground layer + sensor height).

    :param spec: the grid
    :type spec: VoxelGridSpec
    :param config: the generator settings
    :type config: SynthConfig
    :return: the metric position
    :rtype: np.ndarray
    """
    origin = config.get("sensor_origin")
    if len(origin) == 3:
        return np.asarray(origin, dtype=np.float64)
    if len(origin) != 0:
        raise ValueError("synth.sensor_origin requires 3 values, got: %s" % str(origin))
    return np.asarray([
        spec.origin[0],
        spec.origin[1] + spec.dims[1] * spec.voxel_size / 2.0,
        spec.origin[2] + spec.voxel_size + config.get("sensor_height")], dtype=np.float64)


def build_labels(rng: np.random.Generator, spec: VoxelGridSpec, config: SynthConfig) -> np.ndarray:
    """
    Constructs the ground truth: ground layer, boxes standing on it and poles.

    :param rng: the random number generator
    :type rng: np.random.Generator
    :param spec: the grid
    :type spec: VoxelGridSpec
    :param config: the generator settings
    :type config: SynthConfig
    :return: the L x W x H class ids
    :rtype: np.ndarray
    """
    lx, ly, lz = spec.dims
    labels = np.zeros(spec.dims, dtype=np.uint8)
    labels[:, :, 0] = CLASS_GROUND
    if lz < 2:
        return labels

    # keep the sensor column free
    x_start = min(max(2, lx // 16), lx - 1)
    max_size = max(2, min(lx, ly) // 8)
    num_boxes = int(rng.integers(config.get("min_boxes"), config.get("max_boxes") + 1))
    for _ in range(num_boxes):
        cls = CLASS_BOX_A if rng.random() < 0.5 else CLASS_BOX_B
        sx = int(rng.integers(2, max_size + 1))
        sy = int(rng.integers(2, max_size + 1))
        sz = int(rng.integers(1, lz))
        x0 = int(rng.integers(x_start, max(x_start + 1, lx - sx + 1)))
        y0 = int(rng.integers(0, max(1, ly - sy + 1)))
        labels[x0:x0 + sx, y0:y0 + sy, 1:1 + sz] = cls

    num_poles = int(rng.integers(0, config.get("max_poles") + 1))
    for _ in range(num_poles):
        x = int(rng.integers(x_start, lx))
        y = int(rng.integers(0, ly))
        labels[x, y, 1:] = CLASS_POLE
    return labels


def beam_directions(config: SynthConfig) -> np.ndarray:
    """
    Returns the unit direction of every beam/azimuth combination.

    :param config: the generator settings
    :type config: SynthConfig
    :return: the N x 3 directions
    :rtype: np.ndarray
    """
    elevation = np.radians(np.linspace(config.get("elevation_min"), config.get("elevation_max"), config.get("num_beams")))
    step = config.get("azimuth_step")
    if step <= 0:
        raise ValueError("synth.azimuth_step must be positive")
    azimuth = np.radians(np.arange(config.get("azimuth_min"), config.get("azimuth_max") + step / 2.0, step))
    e, a = np.meshgrid(elevation, azimuth, indexing="ij")
    e = e.reshape((-1,))
    a = a.reshape((-1,))
    return np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=1)


def ray_march(labels: np.ndarray, spec: VoxelGridSpec, sensor: np.ndarray,
              directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Marches every ray from the sensor until it hits the first occupied voxel.

    :param labels: the L x W x H class ids
    :type labels: np.ndarray
    :param spec: the grid
    :type spec: VoxelGridSpec
    :param sensor: the metric sensor position
    :type sensor: np.ndarray
    :param directions: the N x 3 unit directions
    :type directions: np.ndarray
    :return: the metric positions of the hits, the Kx3 voxel indices that got hit
    :rtype: tuple
    """
    origin = np.asarray(spec.origin, dtype=np.float64)
    dims = np.asarray(spec.dims)
    corners = origin + np.array(np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij")).reshape((3, -1)).T * spec.extent
    t_max = float(np.max(np.linalg.norm(corners - sensor, axis=1)))
    step = spec.voxel_size * STEP_FRACTION
    active = np.ones(len(directions), dtype=bool)
    hit_pos = np.zeros((len(directions), 3))
    hit_idx = np.zeros((len(directions), 3), dtype=np.int64)
    hit = np.zeros(len(directions), dtype=bool)
    t = step
    while t <= t_max and np.any(active):
        rays = np.nonzero(active)[0]
        pos = sensor + t * directions[rays]
        idx = np.floor((pos - origin) / spec.voxel_size).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < dims), axis=1)
        rays, pos, idx = rays[inside], pos[inside], idx[inside]
        occupied = labels[idx[:, 0], idx[:, 1], idx[:, 2]] > 0
        rays, pos, idx = rays[occupied], pos[occupied], idx[occupied]
        hit[rays] = True
        hit_pos[rays] = pos
        hit_idx[rays] = idx
        active[rays] = False
        t += step
    return hit_pos[hit], hit_idx[hit]


def generate_synthetic_scene(seed: int, spec: VoxelGridSpec, config: SynthConfig = None) -> SceneSample:
    """
    Generates a procedural scene (ground, boxes of two classes, poles) with its complete ground
    truth, and samples the points a LiDAR at the sensor position would see: each beam yields a
    point in the first occupied voxel along it, jittered but kept inside that voxel.
    Deterministic per seed.

    :param seed: the seed
    :type seed: int
    :param spec: the grid
    :type spec: VoxelGridSpec
    :param config: the generator settings, defaults if None
    :type config: SynthConfig
    :return: the scene
    :rtype: SceneSample
    """
    if config is None:
        config = SynthConfig()
    rng = np.random.default_rng(seed)
    labels = build_labels(rng, spec, config)
    sensor = sensor_position(spec, config)
    positions, indices = ray_march(labels, spec, sensor, beam_directions(config))

    jitter = config.get("jitter")
    if not 0.0 <= jitter < 0.5:
        raise ValueError("synth.jitter must be in [0, 0.5), got: %s" % str(jitter))
    s = spec.voxel_size
    positions = positions + rng.uniform(-jitter * s, jitter * s, size=positions.shape)
    lower = np.asarray(spec.origin) + indices * s
    positions = np.clip(positions, lower + MARGIN_FRACTION * s, lower + (1.0 - MARGIN_FRACTION) * s)
    intensity = rng.uniform(0.0, 1.0, size=len(positions))

    points = PointCloud(positions.astype(np.float32), intensity.astype(np.float32))
    return SceneSample(points, footprint(points, spec), LabelGrid(labels), scene_id(seed))

