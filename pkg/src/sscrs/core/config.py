import copy
from collections import OrderedDict
from typing import Any, Dict, List, Tuple

import yaml
from coed.config import Option, AbstractOptionHandler

from .errors import UsageError
from .grid import VoxelGridSpec
from .io import File, Directory
from .performance import NUM_THREADS, num_threads_option

REMAP_SEMANTICKITTI = "semantickitti"
REMAP_SYNTHETIC = "synthetic"

REMAP_TABLES = [
    REMAP_SEMANTICKITTI,
    REMAP_SYNTHETIC,
]


def coerce_value(key: str, value: Any, value_type: type, base_type: type = None) -> Any:
    """
    Turns the value into the type of the option. Strings get parsed as YAML scalars/lists
    unless the option itself is string-valued.

    :param key: the dotted key (for error messages)
    :type key: str
    :param value: the value to coerce
    :param value_type: the type of the option
    :type value_type: type
    :param base_type: the element type for lists
    :type base_type: type
    :return: the coerced value
    """
    if value_type in (str, File, Directory):
        if value is None:
            value = ""
        return value_type(value)
    if isinstance(value, str):
        try:
            value = yaml.safe_load(value)
        except yaml.YAMLError:
            raise UsageError("Failed to parse value for %s: %s" % (key, value))
    try:
        if value_type is bool:
            if not isinstance(value, bool):
                raise ValueError("not a boolean")
            return value
        if value_type is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError("not an integer")
            return int(value)
        if value_type is float:
            if isinstance(value, bool):
                raise ValueError("not a number")
            return float(value)
        if value_type is list:
            if not isinstance(value, (list, tuple)):
                value = [value]
            if base_type is None:
                return list(value)
            return [coerce_value(key, v, base_type) for v in value]
    except (TypeError, ValueError) as e:
        raise UsageError("Invalid value for %s: %s (%s)" % (key, str(value), str(e)))
    return value


class ConfigSection(AbstractOptionHandler):
    """
    Ancestor for the sections of a run configuration. Subclasses declare their options as
    (name, type, default, help[, list element type]) tuples.
    """

    SECTION = None
    OPTIONS = []

    def _define_options(self):
        """
        For configuring the options.
        """
        super()._define_options()
        for name, value_type, def_value, help_str, base_type in self._option_specs():
            if base_type is None:
                self._option_manager.add(Option(name=name, value_type=value_type, def_value=copy.deepcopy(def_value),
                                                help=help_str))
            else:
                self._option_manager.add(Option(name=name, value_type=value_type, def_value=copy.deepcopy(def_value),
                                                help=help_str, base_type=base_type))

    def _option_specs(self) -> List[Tuple]:
        return [tuple(o) + (None,) * (5 - len(o)) for o in self.OPTIONS]

    def option_names(self) -> List[str]:
        """
        Returns the names of the options of this section, in declaration order.

        :return: the names
        :rtype: list
        """
        return [o[0] for o in self._option_specs()]

    def _spec_for(self, name: str) -> Tuple:
        for o in self._option_specs():
            if o[0] == name:
                return o
        raise UsageError("Unknown option: %s.%s" % (self.SECTION, name))

    def get_value(self, name: str) -> Any:
        self._spec_for(name)
        return self.get(name)

    def set_value(self, name: str, value: Any):
        """
        Sets the option, coercing the value to the option's type.

        :param name: the option name
        :type name: str
        :param value: the value (strings get parsed)
        """
        spec = self._spec_for(name)
        self.set(name, coerce_value("%s.%s" % (self.SECTION, name), value, spec[1], spec[4]))

    def to_dict(self) -> Dict[str, Any]:
        return OrderedDict((name, copy.deepcopy(self.get(name))) for name in self.option_names())

    def update(self, d: Dict[str, Any]):
        for k, v in d.items():
            self.set_value(k, v)


class GridConfig(ConfigSection):
    """
    The voxel grid.
    """

    SECTION = "grid"
    OPTIONS = [
        ("origin", list, [0.0, -6.4, -2.0], "The metric minimum corner of the grid (x, y, z)", float),
        ("voxel_size", float, 0.2, "The edge length of a voxel in meters"),
        ("dims", list, [64, 64, 8], "The number of voxels per axis (L, W, H)", int),
    ]

    def spec(self) -> VoxelGridSpec:
        """
        Returns the grid spec.

        :return: the spec
        :rtype: VoxelGridSpec
        """
        try:
            return VoxelGridSpec(tuple(self.get("origin")), self.get("voxel_size"), tuple(self.get("dims")))
        except ValueError as e:
            raise UsageError(str(e))

    def use_spec(self, spec: VoxelGridSpec):
        self.set_value("origin", list(spec.origin))
        self.set_value("voxel_size", spec.voxel_size)
        self.set_value("dims", list(spec.dims))


class ModelConfig(ConfigSection):
    """
    Number of classes, channel plan and ablation switches of the network.
    """

    SECTION = "model"
    OPTIONS = [
        ("num_classes", int, 19, "The number of semantic classes C_n (excluding empty)"),
        ("point_widths", list, [32, 32], "The hidden widths of the per-point MLP", int),
        ("voxel_feature_width", int, 16, "The width C_V of the aggregated voxel features"),
        ("semantic_widths", list, [32, 48, 64], "The widths of the three sparse encoder stages", int),
        ("completion_widths", list, [8, 16, 24, 32], "The widths of the input layer and the three dense residual stages", int),
        ("bev_widths", list, [32, 48, 64, 80], "The BEV widths C_0..C_3 at scales 1, 1/2, 1/4, 1/8", int),
        ("decoder_widths", list, [64, 48, 32], "The widths of the three BEV decoder stages", int),
        ("arf_reduction", int, 4, "The channel reduction of the fusion attention MLPs"),
        ("use_semantic_branch", bool, True, "Whether to use the sparse semantic branch"),
        ("use_completion_branch", bool, True, "Whether to use the dense completion branch"),
        ("use_arf", bool, True, "Whether to fuse with channel attention (otherwise concatenation)"),
        ("init_seed", int, 1, "The seed for the weight initialization"),
    ]

    def validate(self) -> 'ModelConfig':
        """
        Checks the channel plan, raises a UsageError if inconsistent.

        :return: itself
        :rtype: ModelConfig
        """
        expected = {"point_widths": None, "semantic_widths": 3, "completion_widths": 4, "bev_widths": 4,
                    "decoder_widths": 3}
        for name, n in expected.items():
            widths = self.get(name)
            if n is not None and len(widths) != n:
                raise UsageError("model.%s requires %d values, got: %s" % (name, n, str(widths)))
            if len(widths) == 0 or min(widths) < 1:
                raise UsageError("model.%s requires positive widths, got: %s" % (name, str(widths)))
        if self.get("num_classes") < 1:
            raise UsageError("model.num_classes must be at least 1")
        if self.get("voxel_feature_width") < 1 or self.get("arf_reduction") < 1:
            raise UsageError("model.voxel_feature_width and model.arf_reduction must be positive")
        if not self.get("use_semantic_branch") and not self.get("use_completion_branch"):
            raise UsageError("At least one of model.use_semantic_branch and model.use_completion_branch must be enabled")
        return self

    @classmethod
    def full_scale(cls) -> 'ModelConfig':
        """
        Returns a configuration with a wider channel plan for the benchmark grid.

        :return: the configuration
        :rtype: ModelConfig
        """
        result = cls()
        result.set_value("point_widths", [32, 64])
        result.set_value("voxel_feature_width", 32)
        result.set_value("semantic_widths", [64, 96, 128])
        result.set_value("completion_widths", [16, 16, 32, 32])
        result.set_value("bev_widths", [64, 96, 128, 160])
        result.set_value("decoder_widths", [128, 96, 64])
        return result


class TrainConfig(ConfigSection):
    """
    The optimization.
    """

    SECTION = "train"
    OPTIONS = [
        ("lr", float, 0.001, "The Adam learning rate"),
        ("beta1", float, 0.9, "The decay of the first moment"),
        ("beta2", float, 0.999, "The decay of the second moment"),
        ("eps", float, 1e-8, "The Adam epsilon"),
        ("epochs", int, 40, "The number of epochs"),
        ("max_steps", int, 0, "The maximum number of optimizer steps, 0 for unlimited"),
        ("batch_size", int, 2, "The number of scenes per step"),
        ("seed", int, 1, "The seed for augmentation"),
        ("flip", bool, True, "Whether to apply random x-y flips"),
    ]

    def _define_options(self):
        super()._define_options()
        self._option_manager.add(num_threads_option(1))

    def option_names(self) -> List[str]:
        return super().option_names() + [NUM_THREADS]

    def _spec_for(self, name: str) -> Tuple:
        if name == NUM_THREADS:
            return NUM_THREADS, int, 1, "", None
        return super()._spec_for(name)


class LossConfig(ConfigSection):
    """
    The weights of the multi-task loss.
    """

    SECTION = "loss"
    OPTIONS = [
        ("bev_weight", float, 3.0, "The weight of the BEV loss"),
        ("semantic_weight", float, 1.0, "The weight of the semantic branch loss"),
        ("completion_weight", float, 1.0, "The weight of the completion branch loss"),
        ("multi_scale_supervision", bool, True, "Whether to supervise the auxiliary heads"),
    ]


class DataConfig(ConfigSection):
    """
    Dataset locations and class remapping.
    """

    SECTION = "data"
    OPTIONS = [
        ("train_dir", Directory, Directory("."), "The directory with the training scenes"),
        ("eval_dir", Directory, Directory("."), "The directory with the evaluation scenes"),
        ("remap", str, REMAP_SYNTHETIC, "The class remap table: " + "|".join(REMAP_TABLES)),
    ]


class SynthConfig(ConfigSection):
    """
    The synthetic scene generator.
    """

    SECTION = "synth"
    OPTIONS = [
        ("sensor_origin", list, [], "The metric sensor position, empty for grid x-min/center y/ground + sensor_height", float),
        ("sensor_height", float, 2.0, "The sensor height above the ground"),
        ("num_beams", int, 64, "The number of laser beams"),
        ("elevation_min", float, -25.0, "The lowest beam elevation in degrees"),
        ("elevation_max", float, 3.0, "The highest beam elevation in degrees"),
        ("azimuth_min", float, -90.0, "The first azimuth in degrees"),
        ("azimuth_max", float, 90.0, "The last azimuth in degrees"),
        ("azimuth_step", float, 0.4, "The azimuth resolution in degrees"),
        ("min_boxes", int, 1, "The minimum number of boxes"),
        ("max_boxes", int, 6, "The maximum number of boxes"),
        ("max_poles", int, 4, "The maximum number of poles"),
        ("jitter", float, 0.4, "The maximum point jitter as fraction of the voxel size (< 0.5)"),
    ]


SECTIONS = [
    GridConfig,
    ModelConfig,
    TrainConfig,
    LossConfig,
    DataConfig,
    SynthConfig,
]


class RunConfig:
    """
    All settings of a run, organized in sections and addressed via dotted keys
    like 'train.lr'.
    """

    def __init__(self):
        self.sections = OrderedDict((cls.SECTION, cls()) for cls in SECTIONS)

    @property
    def grid(self) -> GridConfig:
        return self.sections["grid"]

    @property
    def model(self) -> ModelConfig:
        return self.sections["model"]

    @property
    def train(self) -> TrainConfig:
        return self.sections["train"]

    @property
    def loss(self) -> LossConfig:
        return self.sections["loss"]

    @property
    def data(self) -> DataConfig:
        return self.sections["data"]

    @property
    def synth(self) -> SynthConfig:
        return self.sections["synth"]

    def _split(self, key: str) -> Tuple[ConfigSection, str]:
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise UsageError("Expected key of the form section.option, got: %s" % key)
        if parts[0] not in self.sections:
            raise UsageError("Unknown section '%s' in key: %s" % (parts[0], key))
        return self.sections[parts[0]], parts[1]

    def get(self, key: str) -> Any:
        section, name = self._split(key)
        return section.get_value(name)

    def set(self, key: str, value: Any):
        """
        Sets the value for the dotted key.

        :param key: the key, eg 'train.lr'
        :type key: str
        :param value: the value, strings get parsed
        """
        section, name = self._split(key)
        section.set_value(name, value)

    def keys(self) -> List[str]:
        return ["%s.%s" % (s, n) for s, section in self.sections.items() for n in section.option_names()]

    def to_flat(self) -> Dict[str, Any]:
        return OrderedDict((k, self.get(k)) for k in self.keys())

    def to_nested(self) -> Dict[str, Dict[str, Any]]:
        """
        Returns plain dictionaries (paths as str), suitable for YAML/JSON.

        :return: section -> option -> value
        :rtype: dict
        """
        result = OrderedDict()
        for s, section in self.sections.items():
            d = OrderedDict()
            for k, v in section.to_dict().items():
                d[k] = str(v) if isinstance(v, str) else v
            result[s] = d
        return result

    def update_flat(self, d: Dict[str, Any]) -> 'RunConfig':
        for k, v in d.items():
            self.set(k, v)
        return self

    def update_nested(self, d: Dict[str, Dict[str, Any]]) -> 'RunConfig':
        """
        Applies the section -> option -> value mapping.

        :param d: the mapping
        :type d: dict
        :return: itself
        :rtype: RunConfig
        """
        if d is None:
            return self
        if not isinstance(d, dict):
            raise UsageError("Expected a mapping of sections, got: %s" % type(d).__name__)
        for s, options in d.items():
            if s not in self.sections:
                raise UsageError("Unknown section: %s" % s)
            if options is None:
                continue
            if not isinstance(options, dict):
                raise UsageError("Expected a mapping of options for section: %s" % s)
            self.sections[s].update(options)
        return self

    def grid_spec(self) -> VoxelGridSpec:
        return self.grid.spec()

    def __str__(self):
        return "\n".join("%s = %s" % (k, str(v)) for k, v in self.to_flat().items())
