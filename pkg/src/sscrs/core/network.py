from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from coed.logging import LoggableObject

from .config import ModelConfig
from .errors import DataError
from .functional import max_pool3d, relu, scatter_reduce
from .grid import PointCloud, VoxelGridSpec, block_factors, build_point_features, group_keys, voxelize, REDUCE_MAX
from .layers import ARF, Conv, ConvTranspose2d, MLP, Norm, ResidualBlock, SGFE, SparseResidualBlock
from .sparse import SparseVoxelTensor, bev_project_sparse, keys_to_coords, linear_keys
from .storage import ParamRegistry
from .tensor import Tensor, concat

NUM_STAGES = 3

PREFIX_SEMANTIC = "sem."
PREFIX_COMPLETION = "com."
PREFIX_BEV = "bev."
PREFIX_AUX = "aux."


def stage_dims(dims: Sequence[int], stage: int) -> tuple:
    """
    Returns the grid dims at scale 1/2^stage (axes of extent 1 stay at 1).

    :param dims: the full resolution dims
    :type dims: tuple
    :param stage: the stage, 0 = full resolution
    :type stage: int
    :return: the dims
    :rtype: tuple
    """
    result = tuple(int(d) for d in dims)
    for _ in range(stage):
        factors = block_factors(result, 2)
        result = tuple(d // f for d, f in zip(result, factors))
    return result


@dataclass
class ForwardOutput:
    """
    The dense class logits (B x (C_n+1) x H x L x W) plus the auxiliary outputs (training only).
    """

    ssc_logits: Tensor
    sem_aux_logits: List[SparseVoxelTensor] = field(default_factory=list)
    com_aux_logits: List[Tensor] = field(default_factory=list)
    features: Dict[str, object] = field(default_factory=dict)

    def predictions(self) -> np.ndarray:
        """
        Returns the per-voxel argmax.

        :return: the B x L x W x H class ids
        :rtype: np.ndarray
        """
        return np.argmax(self.ssc_logits.data, axis=1).transpose((0, 2, 3, 1)).astype(np.uint8)


def bev_project_dense(x: Tensor, conv: Conv) -> Tensor:
    """
    Stacks the vertical axis into the channels (B x C x L x W x H -> B x (C*H) x L x W,
    channel c*H + z) and applies the 1x1 convolution.

    :param x: the dense 3D features
    :type x: Tensor
    :param conv: the 1x1 2D convolution from C*H to the BEV width
    :type conv: Conv
    :return: the BEV map
    :rtype: Tensor
    """
    if x.ndim != 5:
        raise ValueError("bev_project_dense expects B x C x L x W x H, got: %s" % str(x.shape))
    b, c, lx, ly, lz = x.shape
    stacked = x.transpose(0, 1, 4, 2, 3).reshape(b, c * lz, lx, ly)
    return conv(stacked)


def arf_fuse(arf: ARF, f_prev: Tensor, f_sem: Optional[Tensor], f_com: Optional[Tensor]) -> Tensor:
    """
    Fuses the previous stage's map with the available branch maps.

    :param arf: the fusion module, configured for the number of available sources
    :type arf: ARF
    :param f_prev: the output of the previous encoder block
    :type f_prev: Tensor
    :param f_sem: the semantic BEV map, None if the branch is disabled
    :type f_sem: Tensor
    :param f_com: the completion BEV map, None if the branch is disabled
    :type f_com: Tensor
    :return: the fused map
    :rtype: Tensor
    """
    return arf([s for s in (f_prev, f_sem, f_com) if s is not None])


class SSCRSModel(LoggableObject):
    """
    Semantic branch (sparse 3D), completion branch (dense 3D) and BEV fusion network with
    the auxiliary heads of both branches.
    """

    def __init__(self, config: ModelConfig, spec: VoxelGridSpec, params: ParamRegistry = None):
        """
        Initializes the model.

        :param config: the channel plan etc
        :type config: ModelConfig
        :param spec: the voxel grid
        :type spec: VoxelGridSpec
        :param params: the registry to store the parameters in, creates a new one if None
        :type params: ParamRegistry
        """
        super().__init__()
        config.validate()
        self.config = config
        self.spec = spec
        self.params = ParamRegistry() if params is None else params
        self.num_classes = config.get("num_classes")
        lx, ly, _ = spec.dims
        if lx % 8 != 0 or ly % 8 != 0:
            raise DataError("Grid L and W must be divisible by 8, got: %s" % str(spec.dims))
        self.scale_dims = [stage_dims(spec.dims, i) for i in range(NUM_STAGES + 1)]
        self.use_semantic = config.get("use_semantic_branch")
        self.use_completion = config.get("use_completion_branch")
        self._build(np.random.default_rng(config.get("init_seed")))

    def _build(self, rng: np.random.Generator):
        p = self.params
        c = self.config
        bev = c.get("bev_widths")
        num_streams = int(self.use_semantic) + int(self.use_completion)

        if self.use_semantic:
            cv = c.get("voxel_feature_width")
            widths = [cv] + list(c.get("semantic_widths"))
            point = [7] + list(c.get("point_widths"))
            self.point_mlp = MLP(p, "sem.point_mlp", rng, point)
            self.reduce_mlp = MLP(p, "sem.reduce_mlp", rng, [point[-1], cv])
            self.sem_blocks = []
            self.sem_sgfe = []
            self.sem_aux = []
            for i in range(NUM_STAGES):
                self.sem_blocks.append(SparseResidualBlock(p, "sem.block%d" % (i + 1), rng, widths[i], widths[i + 1]))
                self.sem_sgfe.append(SGFE(p, "sem.sgfe%d" % (i + 1), rng, widths[i + 1]))
                self.sem_aux.append(MLP(p, "aux.sem%d" % (i + 1), rng, [widths[i + 1], widths[i + 1], self.num_classes]))
            self.sem_bev = [Conv(p, "bev.sem_proj%d" % i, rng, widths[i], bev[i], 1, dims=2, padding=0)
                            for i in range(NUM_STAGES + 1)]

        if self.use_completion:
            g = list(c.get("completion_widths"))
            self.com_input = Conv(p, "com.input.conv", rng, 1, g[0], 7, dims=3)
            self.com_input_norm = Norm(p, "com.input.norm", rng, g[0])
            self.com_blocks = [ResidualBlock(p, "com.block%d" % (i + 1), rng, g[i], g[i + 1], dims=3)
                               for i in range(NUM_STAGES)]
            self.com_aux = [(Conv(p, "aux.com%d.fc1" % (i + 1), rng, g[i + 1], g[i + 1], 1, dims=3, padding=0),
                             Conv(p, "aux.com%d.fc2" % (i + 1), rng, g[i + 1], 1, 1, dims=3, padding=0))
                            for i in range(NUM_STAGES)]
            self.com_bev = [Conv(p, "bev.com_proj%d" % i, rng, g[i] * self.scale_dims[i][2], bev[i], 1, dims=2, padding=0)
                            for i in range(NUM_STAGES + 1)]

        dec = list(c.get("decoder_widths"))
        use_arf = c.get("use_arf")
        self.bev_input = Conv(p, "bev.input", rng, num_streams * bev[0], bev[0], 3, dims=2)
        self.bev_down = []
        self.bev_arf = []
        for i in range(1, NUM_STAGES + 1):
            self.bev_down.append(ResidualBlock(p, "bev.down%d" % i, rng, bev[i - 1], bev[i], dims=2, stride=2))
            self.bev_arf.append(ARF(p, "bev.arf%d" % i, rng, bev[i], num_sources=1 + num_streams,
                                    reduction=c.get("arf_reduction"), attention=use_arf))
        self.bev_bottleneck = ResidualBlock(p, "bev.bottleneck", rng, bev[3], bev[3], dims=2)
        self.bev_up = []
        self.bev_dec = []
        c_in = bev[3]
        for j in range(NUM_STAGES):
            skip = bev[NUM_STAGES - 1 - j]
            self.bev_up.append(ConvTranspose2d(p, "bev.up%d" % (j + 1), rng, c_in, dec[j]))
            self.bev_dec.append(ResidualBlock(p, "bev.dec%d" % (j + 1), rng, dec[j] + skip, dec[j], dims=2))
            c_in = dec[j]
        self.bev_head = Conv(p, "bev.head", rng, dec[-1], (self.num_classes + 1) * self.spec.dims[2], 1, dims=2,
                             padding=0)

    def parameter_counts(self) -> Dict[str, int]:
        """
        Returns the number of parameters per part of the network.

        :return: part -> count, including 'total'
        :rtype: dict
        """
        return {
            "semantic": self.params.num_parameters(PREFIX_SEMANTIC),
            "completion": self.params.num_parameters(PREFIX_COMPLETION),
            "bev": self.params.num_parameters(PREFIX_BEV),
            "aux": self.params.num_parameters(PREFIX_AUX),
            "total": self.params.num_parameters(),
        }

    def voxel_features(self, points: Sequence[PointCloud]) -> SparseVoxelTensor:
        """
        Aggregates the per-point MLP features by voxel (max) and reduces their width.

        :param points: the point cloud per sample
        :type points: list
        :return: the voxel features F_V at full resolution
        :rtype: SparseVoxelTensor
        """
        keys = []
        feats = []
        for b, pc in enumerate(points):
            indices, _ = voxelize(pc, self.spec)
            if len(indices) == 0:
                raise DataError("empty scene: no points inside the grid (sample %d)" % b)
            coords = np.concatenate([np.full((len(indices), 1), b, dtype=np.int64), indices], axis=1)
            keys.append(linear_keys(coords, self.spec.dims))
            feats.append(build_point_features(pc, self.spec))
        unique, inverse = group_keys(np.concatenate(keys))
        x = Tensor(np.concatenate(feats, axis=0).astype(self.point_mlp.layers[0].weight.dtype))
        h = relu(self.point_mlp(x))
        pooled = scatter_reduce(h, inverse, len(unique), REDUCE_MAX)
        reduced = relu(self.reduce_mlp(pooled))
        return SparseVoxelTensor(keys_to_coords(unique, self.spec.dims), reduced, self.spec.dims, len(points),
                                 check=False)

    def semantic_branch(self, points: Sequence[PointCloud], training: bool = True):
        """
        Runs the sparse semantic branch.

        :param points: the point cloud per sample
        :type points: list
        :param training: whether to evaluate the auxiliary heads
        :type training: bool
        :return: F_V, [F_s1, F_s2, F_s3], the auxiliary logits per stage (empty if not training)
        :rtype: tuple
        """
        f_v = self.voxel_features(points)
        stages = []
        aux = []
        x = f_v
        for i in range(NUM_STAGES):
            x = self.sem_sgfe[i](self.sem_blocks[i](x))
            stages.append(x)
            if training:
                aux.append(x.with_features(self.sem_aux[i](x.features)))
        return f_v, stages, aux

    def completion_branch(self, occupancy: Tensor, training: bool = True):
        """
        Runs the dense completion branch.

        :param occupancy: the B x 1 x L x W x H binary occupancy
        :type occupancy: Tensor
        :param training: whether to evaluate the auxiliary heads
        :type training: bool
        :return: [F_c0, F_c1, F_c2, F_c3], the B x 1 x ... auxiliary logits per stage (empty if not training)
        :rtype: tuple
        """
        if occupancy.ndim != 5 or occupancy.shape[1] != 1:
            raise ValueError("completion_branch expects B x 1 x L x W x H occupancy, got: %s" % str(occupancy.shape))
        x = relu(self.com_input_norm(self.com_input(occupancy)))
        stages = [x]
        aux = []
        for i in range(NUM_STAGES):
            x = self.com_blocks[i](max_pool3d(x, 2))
            stages.append(x)
            if training:
                fc1, fc2 = self.com_aux[i]
                aux.append(fc2(relu(fc1(x))))
        return stages, aux

    def bev_fusion_forward(self, sem_bev: Optional[List[Tensor]], com_bev: Optional[List[Tensor]]) -> Tensor:
        """
        BEV U-Net: input layer on the full resolution streams, three downsampling residual
        blocks each followed by fusion with the branch maps of that scale, a bottleneck
        block and three upsampling stages with skip connections.

        :param sem_bev: the semantic BEV maps at scales 1, 1/2, 1/4, 1/8 (None if disabled)
        :type sem_bev: list
        :param com_bev: the completion BEV maps at scales 1, 1/2, 1/4, 1/8 (None if disabled)
        :type com_bev: list
        :return: the B x (C_n+1) x H x L x W logits
        :rtype: Tensor
        """
        streams = [s for s in (sem_bev, com_bev) if s is not None]
        for i in range(NUM_STAGES + 1):
            shapes = set(s[i].shape for s in streams)
            if len(shapes) != 1:
                raise ValueError("BEV stream shape mismatch at scale 1/%d: %s" % (2 ** i, str(sorted(shapes))))
        x = relu(self.bev_input(concat([s[0] for s in streams], axis=1)))
        skips = [x]
        for i in range(NUM_STAGES):
            x = self.bev_down[i](x)
            if x.shape != streams[0][i + 1].shape:
                raise ValueError("BEV scale mismatch: encoder %s vs branch %s" % (str(x.shape), str(streams[0][i + 1].shape)))
            x = arf_fuse(self.bev_arf[i], x,
                         None if sem_bev is None else sem_bev[i + 1],
                         None if com_bev is None else com_bev[i + 1])
            skips.append(x)
        x = self.bev_bottleneck(x)
        for j in range(NUM_STAGES):
            x = self.bev_up[j](x)
            x = self.bev_dec[j](concat([x, skips[NUM_STAGES - 1 - j]], axis=1))
        logits = self.bev_head(x)
        b, _, lx, ly = logits.shape
        return logits.reshape(b, self.num_classes + 1, self.spec.dims[2], lx, ly)

    def forward(self, points: Sequence[PointCloud], occupancy: np.ndarray, training: bool = True) -> ForwardOutput:
        """
        Runs the full network.

        :param points: the point cloud per sample
        :type points: list
        :param occupancy: the B x L x W x H input occupancy
        :type occupancy: np.ndarray
        :param training: whether to evaluate the auxiliary heads
        :type training: bool
        :return: the output
        :rtype: ForwardOutput
        """
        occupancy = np.asarray(occupancy)
        if occupancy.ndim != 4 or tuple(occupancy.shape[1:]) != self.spec.dims or len(occupancy) != len(points):
            raise DataError("Expected occupancy of shape (%d,) + %s, got: %s"
                            % (len(points), str(self.spec.dims), str(occupancy.shape)))
        dtype = self.bev_head.weight.dtype
        features = dict()
        result = ForwardOutput(ssc_logits=None, features=features)
        sem_bev = None
        com_bev = None

        if self.use_semantic:
            f_v, stages, aux = self.semantic_branch(points, training=training)
            features["F_V"] = f_v
            for i, s in enumerate(stages):
                features["F_s%d" % (i + 1)] = s
            result.sem_aux_logits = aux
            sem_bev = [conv(bev_project_sparse(s)) for conv, s in zip(self.sem_bev, [f_v] + stages)]

        if self.use_completion:
            occ = Tensor(occupancy[:, None].astype(dtype))
            stages, aux = self.completion_branch(occ, training=training)
            for i, s in enumerate(stages):
                features["F_c%d" % i] = s
            result.com_aux_logits = aux
            com_bev = [bev_project_dense(s, conv) for conv, s in zip(self.com_bev, stages)]

        result.ssc_logits = self.bev_fusion_forward(sem_bev, com_bev)
        return result

    def __call__(self, points, occupancy, training: bool = True) -> ForwardOutput:
        return self.forward(points, occupancy, training=training)


def ssc_rs_forward(model: SSCRSModel, samples: Sequence, training: bool = False) -> ForwardOutput:
    """
    Runs the model on a batch of scene samples.

    :param model: the model
    :type model: SSCRSModel
    :param samples: objects with 'points' and 'input_occupancy'
    :type samples: list
    :param training: whether to evaluate the auxiliary heads
    :type training: bool
    :return: the output
    :rtype: ForwardOutput
    """
    if len(samples) == 0:
        raise DataError("Empty batch!")
    points = [s.points for s in samples]
    occupancy = np.stack([np.asarray(s.input_occupancy, dtype=bool) for s in samples])
    return model.forward(points, occupancy, training=training)
