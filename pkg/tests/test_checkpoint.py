import struct

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sscrs.core.checkpoint import (MAGIC, checkpoint_read, checkpoint_write, decode_checkpoint, encode_checkpoint,
                                   load_into, split_checkpoint)
from sscrs.core.errors import DataError
from sscrs.core.layers import MLP
from sscrs.core.optim import Adam, AdamState, adam_step
from sscrs.core.storage import ParamRegistry


@pytest.fixture
def registry(rng):
    params = ParamRegistry()
    MLP(params, "head", rng, [3, 4, 2])
    return params


class TestEncoding:
    """Binary layout of the named tensor table."""

    def test_empty_table(self):
        data = encode_checkpoint({})
        assert len(data) == 12
        assert data[:4] == MAGIC
        assert struct.unpack("<II", data[4:]) == (1, 0)
        assert decode_checkpoint(data) == {}

    def test_layout_of_one_tensor(self):
        data = encode_checkpoint({"w": np.arange(6.0).reshape(2, 3)})
        # header, name length, name, rank, 2 dims, 6 float32 values
        assert len(data) == 12 + 2 + 1 + 1 + 16 + 24
        back = decode_checkpoint(data)
        assert back["w"].dtype == np.float32
        assert_array_equal(back["w"], np.arange(6.0).reshape(2, 3))

    def test_names_in_order(self):
        back = decode_checkpoint(encode_checkpoint({"b": np.zeros(1), "a": np.ones((1, 1))}))
        assert list(back.keys()) == ["a", "b"]

    def test_bad_magic(self):
        with pytest.raises(DataError, match="magic"):
            decode_checkpoint(b"XXXX" + b"\x00" * 8)

    def test_truncated(self):
        data = encode_checkpoint({"w": np.ones(4)})
        with pytest.raises(DataError, match="Truncated"):
            decode_checkpoint(data[:-3])

    def test_trailing_bytes(self):
        with pytest.raises(DataError, match="Trailing"):
            decode_checkpoint(encode_checkpoint({"w": np.ones(2)}) + b"\x00")

    def test_huge_dims_are_truncation(self):
        # 2^62 * 4 wraps to 0 in 64-bit arithmetic
        data = MAGIC + struct.pack("<II", 1, 1) + struct.pack("<H", 1) + b"w" + struct.pack("<BQQ", 2, 2 ** 62, 4)
        with pytest.raises(DataError, match="Truncated"):
            decode_checkpoint(data)

    def test_unsupported_version(self):
        with pytest.raises(DataError):
            decode_checkpoint(MAGIC + struct.pack("<II", 2, 0))


class TestFiles:
    """Writing, reading and restoring checkpoints."""

    def test_parameters_round_trip(self, tmp_path, registry, rng):
        path = str(tmp_path / "model.sscr")
        checkpoint_write(path, registry)
        other = ParamRegistry()
        MLP(other, "head", np.random.default_rng(99), [3, 4, 2])
        assert load_into(path, other) is None
        for name in registry.keys():
            assert_allclose(other.get(name).data, registry.get(name).data, rtol=1e-6)

    def test_mismatch_names_tensor(self, tmp_path, registry, rng):
        path = str(tmp_path / "model.sscr")
        checkpoint_write(path, registry)
        other = ParamRegistry()
        MLP(other, "head", rng, [3, 5, 2])
        with pytest.raises(DataError, match="head.fc1"):
            load_into(path, other)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            checkpoint_read(str(tmp_path / "none.sscr"))

    def test_optimizer_state_round_trip(self, tmp_path, registry):
        state = AdamState()
        grads = {name: np.ones(p.shape) for name, p in registry.items()}
        adam_step(registry, grads, state)
        adam_step(registry, grads, state)
        path = str(tmp_path / "last.sscr")
        checkpoint_write(path, registry, optimizer=state, extra={"optim.epoch": np.array([4.0])})
        params, optim = split_checkpoint(checkpoint_read(path))
        assert "optim.epoch" not in params
        assert optim.step == 2
        assert sorted(optim.m.keys()) == registry.keys()
        assert_allclose(optim.v["head.fc1.weight"], state.v["head.fc1.weight"], rtol=1e-6)


class TestAdam:
    """Bias-corrected moment updates."""

    def test_first_step_moves_by_learning_rate(self, registry):
        before = registry.get("head.fc2.bias").data.copy()
        opt = Adam(registry, lr=0.01)
        opt.step({"head.fc2.bias": np.array([2.0, -3.0])})
        assert_allclose(registry.get("head.fc2.bias").data, before - 0.01 * np.array([1.0, -1.0]), rtol=1e-5)
        assert opt.state.step == 1

    def test_missing_gradient_is_zero(self, registry):
        before = registry.get("head.fc1.weight").data.copy()
        Adam(registry).step({})
        assert_array_equal(registry.get("head.fc1.weight").data, before)
