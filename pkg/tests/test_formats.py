import numpy as np
import pytest
from numpy.testing import assert_array_equal

from sscrs.core.errors import DataError
from sscrs.core.formats import (export_csv, get_remap, pack_bits, read_csv, read_occupancy, read_points,
                                read_voxel_labels, unpack_bits, write_occupancy, write_points,
                                write_predictions, write_voxel_labels)
from sscrs.core.grid import LabelGrid, PointCloud


class TestPackedBits:
    """One flag per bit, most significant bit first."""

    def test_single_high_bit(self):
        assert_array_equal(unpack_bits(b"\x80", 8), [True] + [False] * 7)

    def test_full_and_empty_bytes(self):
        assert unpack_bits(b"\xff", 8).all()
        assert not unpack_bits(b"\x00", 8).any()

    def test_partial_byte(self):
        flags = np.array([False, True, True])
        assert pack_bits(flags) == b"\x60"
        assert_array_equal(unpack_bits(b"\x60", 3), flags)

    def test_wrong_size(self):
        with pytest.raises(DataError):
            unpack_bits(b"\x00\x00", 8)

    def test_occupancy_order(self, tmp_path):
        occ = np.zeros((2, 2, 2), dtype=bool)
        occ[0, 0, 1] = True
        path = str(tmp_path / "occ.bin")
        write_occupancy(occ, path)
        with open(path, "rb") as f:
            assert f.read() == b"\x40"
        assert_array_equal(read_occupancy(path, (2, 2, 2)), occ)


class TestPoints:
    """Little-endian float32 quadruples."""

    def test_round_trip(self, tmp_path, rng):
        points = PointCloud(rng.uniform(-5, 5, size=(7, 3)), rng.uniform(0, 1, size=7))
        path = str(tmp_path / "scan.bin")
        write_points(points, path)
        back = read_points(path)
        assert len(back) == 7
        np.testing.assert_allclose(back.positions, points.positions, rtol=1e-6)

    def test_size_not_multiple_of_sixteen(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * 20)
        with pytest.raises(DataError, match="multiple of 16"):
            read_points(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_points(str(tmp_path / "missing.bin"))


class TestLabels:
    """Raw label ids, remap tables and the invalid companion file."""

    def test_remap_tables(self):
        table = get_remap("semantickitti")
        assert table.num_classes == 19
        assert_array_equal(table.apply(np.array([0, 10, 252, 81])), [0, 1, 1, 19])
        assert_array_equal(table.apply_inverse(np.array([1, 19])), [10, 81])
        with pytest.raises(DataError):
            get_remap("nuscenes")

    def test_unmapped_id(self):
        with pytest.raises(DataError, match="Unmapped"):
            get_remap("semantickitti").apply(np.array([10, 12]))

    def test_round_trip_with_invalid(self, tmp_path):
        labels = np.zeros((4, 2, 2), dtype=np.uint8)
        labels[1, 0, 1] = 9
        labels[3, 1, 0] = 13
        invalid = np.zeros(labels.shape, dtype=bool)
        invalid[2, 1, 1] = True
        table = get_remap("semantickitti")
        path = str(tmp_path / "000000.label")
        write_voxel_labels(LabelGrid(labels, invalid), path, table)
        raw = np.fromfile(path, dtype="<u2")
        assert raw[np.ravel_multi_index((1, 0, 1), labels.shape)] == 40
        back = read_voxel_labels(path, table, labels.shape)
        assert_array_equal(back.labels, labels)
        assert_array_equal(back.invalid, invalid)

    def test_predictions_have_no_invalid_file(self, tmp_path):
        path = tmp_path / "000001.label"
        write_predictions(LabelGrid(np.ones((2, 2, 2), dtype=np.uint8)), str(path), get_remap("synthetic"))
        assert path.exists()
        assert not (tmp_path / "000001.invalid").exists()
        assert not read_voxel_labels(str(path), get_remap("synthetic"), (2, 2, 2)).invalid.any()

    def test_wrong_label_size(self, tmp_path):
        path = tmp_path / "x.label"
        path.write_bytes(b"\x00" * 6)
        with pytest.raises(DataError):
            read_voxel_labels(str(path), get_remap("synthetic"), (2, 2, 2))


def test_export_csv(tmp_path):
    labels = np.zeros((3, 3, 2), dtype=np.uint8)
    labels[0, 1, 1] = 4
    labels[2, 2, 0] = 1
    path = str(tmp_path / "pred.csv")
    assert export_csv(LabelGrid(labels), path) == 2
    with open(path) as f:
        assert f.readline().strip() == "x,y,z,class"
    assert read_csv(path) == [(0, 1, 1, 4), (2, 2, 0, 1)]
