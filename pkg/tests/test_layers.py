import numpy as np
import pytest
from numpy.testing import assert_allclose

from sscrs.core.layers import ARF, MLP, Conv, ConvTranspose2d, ResidualBlock
from sscrs.core.storage import ParamRegistry
from sscrs.core.tensor import Tensor


@pytest.fixture
def params():
    return ParamRegistry()


class TestParamRegistry:
    """Named parameter storage."""

    def test_names_are_prefixed_and_sorted(self, params, rng):
        MLP(params, "head", rng, [4, 3, 2])
        assert params.keys() == ["head.fc1.bias", "head.fc1.weight", "head.fc2.bias", "head.fc2.weight"]
        assert params.num_parameters() == 4 * 3 + 3 + 3 * 2 + 2
        assert params.num_parameters("head.fc2") == 8

    def test_duplicates_and_bad_names_rejected(self, params):
        params.add("a.b", Tensor(np.zeros(1)))
        with pytest.raises(ValueError):
            params.add("a.b", Tensor(np.zeros(1)))
        with pytest.raises(ValueError):
            params.add("a b", Tensor(np.zeros(1)))

    def test_load_state_names_offending_tensor(self, params, rng):
        MLP(params, "m", rng, [2, 2])
        state = params.state()
        state["m.fc1.weight"] = np.zeros((3, 2))
        with pytest.raises(ValueError, match="m.fc1.weight"):
            params.load_state(state)
        state = params.state()
        state["m.extra"] = np.zeros(1)
        with pytest.raises(ValueError, match="m.extra"):
            params.load_state(state, strict=True)
        params.load_state(state, strict=False)

    def test_state_is_a_copy(self, params, rng):
        MLP(params, "m", rng, [2, 2])
        state = params.state()
        state["m.fc1.bias"][:] = 5.0
        assert_allclose(params.get("m.fc1.bias").data, [0.0, 0.0])


class TestLayers:
    """Shapes and initialization of the building blocks."""

    def test_initialization_is_seeded(self):
        a, b = ParamRegistry(), ParamRegistry()
        Conv(a, "c", np.random.default_rng(3), 2, 4, 3)
        Conv(b, "c", np.random.default_rng(3), 2, 4, 3)
        assert_allclose(a.get("c.weight").data, b.get("c.weight").data)
        bound = 1.0 / np.sqrt(2 * 27)
        assert np.all(np.abs(a.get("c.weight").data) <= bound)

    def test_residual_block_downsamples(self, params, rng):
        block = ResidualBlock(params, "r", rng, 3, 5, dims=2, stride=2)
        out = block(Tensor(rng.standard_normal((2, 3, 8, 8)).astype(np.float32)))
        assert out.shape == (2, 5, 4, 4)
        assert np.all(out.data >= 0)
        assert params.has("r.shortcut.weight")

    def test_residual_block_identity_shortcut(self, params, rng):
        ResidualBlock(params, "r", rng, 3, 3, dims=3)
        assert not params.has("r.shortcut.weight")

    def test_transposed_conv_doubles(self, params, rng):
        up = ConvTranspose2d(params, "up", rng, 4, 2)
        assert up(Tensor(np.ones((1, 4, 3, 5), dtype=np.float32))).shape == (1, 2, 6, 10)


class TestARF:
    """Adaptive fusion of BEV maps."""

    def test_attention_weights_in_unit_interval(self, params, rng):
        arf = ARF(params, "arf", rng, 4, num_sources=3, reduction=2)
        sources = [Tensor(rng.standard_normal((2, 4, 4, 4)).astype(np.float32)) for _ in range(3)]
        weights = arf.weights(sources)
        assert len(weights) == 3
        for w in weights:
            assert w.shape == (2, 4)
            assert np.all((w.data > 0) & (w.data < 1))
        assert arf(sources).shape == (2, 4, 4, 4)

    def test_concat_mode(self, params, rng):
        arf = ARF(params, "arf", rng, 4, num_sources=2, attention=False)
        assert params.get("arf.phi.weight").shape == (4, 8, 1, 1)
        sources = [Tensor(np.ones((1, 4, 2, 2), dtype=np.float32)) for _ in range(2)]
        assert arf(sources).shape == (1, 4, 2, 2)

    def test_shape_mismatch_rejected(self, params, rng):
        arf = ARF(params, "arf", rng, 4, num_sources=2)
        with pytest.raises(ValueError):
            arf([Tensor(np.ones((1, 4, 2, 2))), Tensor(np.ones((1, 4, 4, 4)))])
        with pytest.raises(ValueError):
            arf([Tensor(np.ones((1, 4, 2, 2)))])
