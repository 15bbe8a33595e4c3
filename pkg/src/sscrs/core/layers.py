from typing import List, Optional, Sequence

import numpy as np

from .functional import (linear, relu, sigmoid, conv2d, conv3d, conv2d_transposed, channel_norm,
                         global_avg_pool2d)
from .sparse import SparseVoxelTensor, sparse_residual_block, sgfe_downscale, SGFE_SCALES
from .storage import ParamRegistry
from .tensor import Tensor, concat, get_default_dtype


class Module:
    """
    Ancestor for layers. Parameters get registered under '<prefix>.<name>' in the shared
    registry; weights are drawn uniformly from +/- 1/sqrt(fan_in), biases and shifts start
    at zero and gains at one.
    """

    def __init__(self, params: ParamRegistry, prefix: str, rng: np.random.Generator):
        """
        Initializes the module.

        :param params: the registry to add the parameters to
        :type params: ParamRegistry
        :param prefix: the name prefix
        :type prefix: str
        :param rng: the random number generator for the initialization
        :type rng: np.random.Generator
        """
        self.params = params
        self.prefix = prefix
        self.rng = rng

    def name(self, suffix: str) -> str:
        return self.prefix + "." + suffix

    def uniform(self, suffix: str, shape: Sequence[int], fan_in: int) -> Tensor:
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        values = self.rng.uniform(-bound, bound, size=tuple(shape))
        return self.params.add(self.name(suffix), Tensor(values.astype(get_default_dtype())))

    def constant(self, suffix: str, shape: Sequence[int], value: float) -> Tensor:
        return self.params.add(self.name(suffix), Tensor(np.full(tuple(shape), value, dtype=get_default_dtype())))

    def child(self, suffix: str) -> str:
        return self.name(suffix)


class Linear(Module):

    def __init__(self, params, prefix, rng, c_in: int, c_out: int):
        super().__init__(params, prefix, rng)
        self.weight = self.uniform("weight", (c_out, c_in), c_in)
        self.bias = self.constant("bias", (c_out,), 0.0)

    @property
    def pair(self):
        return self.weight, self.bias

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class MLP(Module):
    """
    Per-row multi-layer perceptron with ReLU between the layers (not after the last one).
    """

    def __init__(self, params, prefix, rng, widths: Sequence[int]):
        super().__init__(params, prefix, rng)
        if len(widths) < 2:
            raise ValueError("MLP requires at least input and output width, got: %s" % str(widths))
        self.layers = [Linear(params, self.child("fc%d" % (i + 1)), rng, widths[i], widths[i + 1])
                       for i in range(len(widths) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            if i > 0:
                x = relu(x)
            x = layer(x)
        return x


class Conv(Module):
    """
    Dense 2D or 3D convolution, weights C_out x C_in x k^dims.
    """

    def __init__(self, params, prefix, rng, c_in: int, c_out: int, kernel: int, dims: int = 3,
                 stride: int = 1, padding: int = None):
        super().__init__(params, prefix, rng)
        if dims not in (2, 3):
            raise ValueError("Only 2D and 3D convolutions supported, got: %d" % dims)
        self.dims = dims
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = self.uniform("weight", (c_out, c_in) + (kernel,) * dims, c_in * kernel ** dims)
        self.bias = self.constant("bias", (c_out,), 0.0)

    def __call__(self, x: Tensor) -> Tensor:
        if self.dims == 3:
            return conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):

    def __init__(self, params, prefix, rng, c_in: int, c_out: int, stride: int = 2):
        super().__init__(params, prefix, rng)
        self.stride = stride
        self.weight = self.uniform("weight", (c_in, c_out, stride, stride), c_in)
        self.bias = self.constant("bias", (c_out,), 0.0)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d_transposed(x, self.weight, self.bias, stride=self.stride)


class Norm(Module):

    def __init__(self, params, prefix, rng, channels: int):
        super().__init__(params, prefix, rng)
        self.gain = self.constant("gain", (channels,), 1.0)
        self.shift = self.constant("shift", (channels,), 0.0)

    @property
    def pair(self):
        return self.gain, self.shift

    def __call__(self, x: Tensor) -> Tensor:
        return channel_norm(x, self.gain, self.shift)


class ResidualBlock(Module):
    """
    Dense residual block: y = relu(shortcut(x) + conv2(relu(norm2(conv1(relu(norm1(x))))))).
    The shortcut is the identity unless stride or width change, then a strided 1x1 convolution.
    """

    def __init__(self, params, prefix, rng, c_in: int, c_out: int, dims: int = 3, stride: int = 1):
        super().__init__(params, prefix, rng)
        self.norm1 = Norm(params, self.child("norm1"), rng, c_in)
        self.conv1 = Conv(params, self.child("conv1"), rng, c_in, c_out, 3, dims=dims, stride=stride)
        self.norm2 = Norm(params, self.child("norm2"), rng, c_out)
        self.conv2 = Conv(params, self.child("conv2"), rng, c_out, c_out, 3, dims=dims)
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = Conv(params, self.child("shortcut"), rng, c_in, c_out, 1, dims=dims, stride=stride,
                                 padding=0)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv1(relu(self.norm1(x)))
        h = self.conv2(relu(self.norm2(h)))
        s = x if self.shortcut is None else self.shortcut(x)
        return relu(s + h)


class SparseResidualBlock(Module):
    """
    Sparse residual block of two submanifold 3^3 convolutions, see sparse.sparse_residual_block.
    """

    def __init__(self, params, prefix, rng, c_in: int, c_out: int, kernel: int = 3):
        super().__init__(params, prefix, rng)
        fan = kernel ** 3
        self.norm1 = Norm(params, self.child("norm1"), rng, c_in)
        self.conv1_weight = self.uniform("conv1.weight", (c_out, c_in, kernel, kernel, kernel), c_in * fan)
        self.conv1_bias = self.constant("conv1.bias", (c_out,), 0.0)
        self.norm2 = Norm(params, self.child("norm2"), rng, c_out)
        self.conv2_weight = self.uniform("conv2.weight", (c_out, c_out, kernel, kernel, kernel), c_out * fan)
        self.conv2_bias = self.constant("conv2.bias", (c_out,), 0.0)
        self.projection = None
        if c_in != c_out:
            self.projection = Linear(params, self.child("projection"), rng, c_in, c_out)

    def __call__(self, x: SparseVoxelTensor) -> SparseVoxelTensor:
        return sparse_residual_block(
            x,
            (self.conv1_weight, self.conv1_bias),
            (self.conv2_weight, self.conv2_bias),
            self.norm1.pair,
            self.norm2.pair,
            None if self.projection is None else self.projection.pair)


class SGFE(Module):
    """
    Multi-scale geometry enhancement with attentive scale selection, then factor-2 downscaling.
    """

    def __init__(self, params, prefix, rng, channels: int):
        super().__init__(params, prefix, rng)
        self.branches = [Linear(params, self.child("scale%d" % r), rng, channels, channels) for r in SGFE_SCALES]
        self.score = Linear(params, self.child("score"), rng, len(SGFE_SCALES) * channels, len(SGFE_SCALES))

    def __call__(self, x: SparseVoxelTensor, return_attention: bool = False):
        return sgfe_downscale(x, [b.pair for b in self.branches], self.score.pair, return_attention=return_attention)


class ARF(Module):
    """
    Adaptive representation fusion: every source gets per-channel weights
    sigmoid(MLP(global average pool)), the weighted sources are summed and passed through
    a 1x1 convolution. Without attention, the sources are concatenated instead.
    """

    def __init__(self, params, prefix, rng, channels: int, num_sources: int = 3, reduction: int = 4,
                 attention: bool = True):
        super().__init__(params, prefix, rng)
        if num_sources < 1:
            raise ValueError("ARF requires at least one source!")
        self.channels = channels
        self.num_sources = num_sources
        self.attention = attention
        self.mlps = []
        if attention:
            hidden = max(1, channels // reduction)
            self.mlps = [MLP(params, self.child("mlp%d" % i), rng, [channels, hidden, channels])
                         for i in range(num_sources)]
            self.phi = Conv(params, self.child("phi"), rng, channels, channels, 1, dims=2, padding=0)
        else:
            self.phi = Conv(params, self.child("phi"), rng, channels * num_sources, channels, 1, dims=2, padding=0)

    def weights(self, sources: Sequence[Tensor]) -> List[Tensor]:
        """
        Computes the B x C attention weights per source.

        :param sources: the B x C x h x w maps
        :type sources: list
        :return: the weights
        :rtype: list
        """
        return [sigmoid(mlp(global_avg_pool2d(s))) for mlp, s in zip(self.mlps, sources)]

    def __call__(self, sources: Sequence[Tensor]) -> Tensor:
        if len(sources) != self.num_sources:
            raise ValueError("Expected %d sources, got %d" % (self.num_sources, len(sources)))
        for s in sources[1:]:
            if s.shape != sources[0].shape:
                raise ValueError("ARF shape mismatch: %s vs %s" % (str(sources[0].shape), str(s.shape)))
        if sources[0].ndim != 4 or sources[0].shape[1] != self.channels:
            raise ValueError("ARF expects B x %d x h x w, got: %s" % (self.channels, str(sources[0].shape)))
        if not self.attention:
            return self.phi(concat(list(sources), axis=1))
        fused: Optional[Tensor] = None
        b, c = sources[0].shape[:2]
        for a, s in zip(self.weights(sources), sources):
            term = a.reshape(b, c, 1, 1) * s
            fused = term if fused is None else fused + term
        return self.phi(fused)
