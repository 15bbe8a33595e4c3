import abc
import os
import traceback
from typing import List, Optional

from coed.config import Option, AbstractOptionHandler

from .config import RunConfig, REMAP_SYNTHETIC
from .dataset import SceneDataset, write_manifest, write_scene
from .errors import EXIT_NUMERICAL, EXIT_SUCCESS, SSCError, UsageError, exit_code_for
from .formats import export_csv, get_remap, read_points, write_predictions
from .gradcheck import CheckResult, GradientSuite, SCALE_TINY
from .grid import VoxelGridSpec
from .inference import Evaluator, load_model, predict_points
from .io import File, Directory, load_config
from .metrics import MIOU_ALL, MIOU_MODES
from .stopping import Stoppable
from .synth import generate_synthetic_scene
from .train import Trainer


def centered_grid(dims: List[int], voxel_size: float) -> VoxelGridSpec:
    """
    Returns the grid that starts at x = 0, is centered on y = 0 and starts 2m below the sensor.

    :param dims: the voxels per axis (L, W, H)
    :type dims: list
    :param voxel_size: the voxel edge length
    :type voxel_size: float
    :return: the grid
    :rtype: VoxelGridSpec
    """
    if len(dims) != 3:
        raise UsageError("Grid requires 3 dims (L,W,H), got: %s" % str(dims))
    return VoxelGridSpec((0.0, -dims[1] * voxel_size / 2.0, -2.0), voxel_size, tuple(dims))


class AbstractCommand(AbstractOptionHandler, Stoppable, abc.ABC):
    """
    Ancestor for the commands of the command-line interface. Like actors, commands get
    set up, executed and wrapped up; setup and execute return None if successful,
    otherwise an error message, and execute records the matching exit code.
    """

    def _initialize(self):
        """
        Performs initializations.
        """
        super()._initialize()
        self._stopped = False
        self._job = None
        self.exit_code = EXIT_SUCCESS

    def _define_options(self):
        """
        For configuring the options.
        """
        super()._define_options()
        self._option_manager.add(Option(name="config", value_type=File, def_value=File(""),
                                        help="The run configuration (.conf/.yaml/.json), defaults if empty"))

    @property
    def name(self) -> str:
        return type(self).__name__

    def load_run_config(self) -> RunConfig:
        """
        Loads the configured run configuration, or returns the defaults.

        :return: the configuration
        :rtype: RunConfig
        """
        path = self.get("config")
        if len(path) == 0:
            return RunConfig()
        return load_config(path)

    def _check(self) -> Optional[str]:
        """
        For performing checks before the execution.

        :return: None if check successful, otherwise error message
        :rtype: str
        """
        return None

    def _require(self, *names: str) -> Optional[str]:
        missing = [n for n in names if len(self.get(n)) == 0]
        if len(missing) > 0:
            return "Missing required option(s): %s" % ", ".join(missing)
        return None

    def setup(self) -> Optional[str]:
        """
        Prepares the command for execution.

        :return: None if successful, otherwise error message
        :rtype: str
        """
        self._stopped = False
        self.exit_code = EXIT_SUCCESS
        result = self._check()
        if result is not None:
            self.exit_code = UsageError.exit_code
        return result

    @abc.abstractmethod
    def _do_execute(self) -> Optional[str]:
        """
        Performs the actual execution.

        :return: None if successful, otherwise error message
        :rtype: str
        """
        raise NotImplementedError()

    def execute(self) -> Optional[str]:
        """
        Executes the command.

        :return: None if successful, otherwise error message
        :rtype: str
        """
        try:
            result = self._do_execute()
        except SSCError as e:
            self.exit_code = exit_code_for(e)
            result = str(e)
            if self.is_debug:
                self.log(traceback.format_exc())
        except Exception as e:
            self.exit_code = exit_code_for(e)
            result = "%s: %s" % (type(e).__name__, str(e))
            if self.is_debug:
                result += "\n" + traceback.format_exc()
        return result

    def wrap_up(self):
        """
        For finishing up the execution.
        """
        self._job = None

    def stop_execution(self):
        """
        Stops the execution (and the running job, if any).
        """
        self._stopped = True
        if isinstance(self._job, Stoppable):
            self._job.stop_execution()
        if self.is_debug:
            self.log("Stopped!")

    @property
    def is_stopped(self) -> bool:
        return self._stopped


class SynthCommand(AbstractCommand):
    """
    Writes synthetic scenes plus manifest to a dataset directory.
    """

    def _define_options(self):
        super()._define_options()
        self._option_manager.add(Option(name="output_dir", value_type=Directory, def_value=Directory(""),
                                        help="The dataset directory to write"))
        self._option_manager.add(Option(name="count", value_type=int, def_value=1,
                                        help="The number of scenes"))
        self._option_manager.add(Option(name="seed", value_type=int, def_value=1,
                                        help="The seed of the first scene, scene i uses seed + i"))
        self._option_manager.add(Option(name="grid", value_type=list, def_value=[64, 64, 8], base_type=int,
                                        help="The voxels per axis (L, W, H)"))
        self._option_manager.add(Option(name="voxel_size", value_type=float, def_value=0.2,
                                        help="The voxel edge length in meters"))

    def _check(self):
        result = self._require("output_dir")
        if result is None and self.get("count") < 1:
            result = "Count must be at least 1, got: %d" % self.get("count")
        return result

    def _do_execute(self):
        config = self.load_run_config()
        spec = centered_grid(self.get("grid"), self.get("voxel_size"))
        output_dir = self.get("output_dir")
        remap = get_remap(REMAP_SYNTHETIC)
        ids = []
        for i in range(self.get("count")):
            if self.is_stopped:
                return "Stopped"
            sample = generate_synthetic_scene(self.get("seed") + i, spec, config.synth)
            write_scene(sample, output_dir, remap)
            ids.append(sample.id)
        write_manifest(output_dir, ids, spec, REMAP_SYNTHETIC)
        self.log("Wrote %d scenes to %s" % (len(ids), output_dir))
        return None


class TrainCommand(AbstractCommand):
    """
    Trains a model on a dataset directory.
    """

    def _define_options(self):
        super()._define_options()
        self._option_manager.add(Option(name="data_dir", value_type=Directory, def_value=Directory(""),
                                        help="The training scenes, data.train_dir of the configuration if empty"))
        self._option_manager.add(Option(name="output_dir", value_type=Directory, def_value=Directory(""),
                                        help="The directory for log, checkpoints and run.conf"))
        self._option_manager.add(Option(name="resume", value_type=File, def_value=File(""),
                                        help="The checkpoint to resume from, optional"))

    def _check(self):
        return self._require("output_dir")

    def _do_execute(self):
        config = self.load_run_config()
        data_dir = self.get("data_dir")
        if len(data_dir) == 0:
            data_dir = config.data.get("train_dir")
        resume = self.get("resume")
        dataset = SceneDataset(data_dir, config.grid_spec(), num_threads=config.train.get("num_threads"))
        self._job = Trainer(config, self.get("output_dir"), debug=self.is_debug)
        if len(resume) > 0:
            self._job.resume(resume)
        self._job.train(dataset)
        return None


class EvalCommand(AbstractCommand):
    """
    Evaluates a checkpoint on a dataset directory and writes the metrics report.
    """

    def _define_options(self):
        super()._define_options()
        self._option_manager.add(Option(name="checkpoint", value_type=File, def_value=File(""),
                                        help="The checkpoint to evaluate"))
        self._option_manager.add(Option(name="data_dir", value_type=Directory, def_value=Directory(""),
                                        help="The evaluation scenes, data.eval_dir of the configuration if empty"))
        self._option_manager.add(Option(name="output", value_type=File, def_value=File(""),
                                        help="The metrics report to write"))
        self._option_manager.add(Option(name="miou_mode", value_type=str, def_value=MIOU_ALL,
                                        help="How to average the class IoUs: " + "|".join(MIOU_MODES)))
        self._option_manager.add(Option(name="wall_time", value_type=bool, def_value=False,
                                        help="Whether to include the evaluation time in the report"))

    def _check(self):
        result = self._require("checkpoint", "output")
        if result is None and self.get("miou_mode") not in MIOU_MODES:
            result = "Unknown mIoU mode: %s" % self.get("miou_mode")
        return result

    def _do_execute(self):
        config = None if len(self.get("config")) == 0 else self.load_run_config()
        model, config = load_model(self.get("checkpoint"), config)
        data_dir = self.get("data_dir")
        if len(data_dir) == 0:
            data_dir = config.data.get("eval_dir")
        dataset = SceneDataset(data_dir, config.grid_spec(), num_threads=config.train.get("num_threads"))
        self._job = Evaluator(model, batch_size=config.train.get("batch_size"), mode=self.get("miou_mode"),
                              wall_time=self.get("wall_time"))
        report = self._job.evaluate(dataset)
        output = self.get("output")
        if len(os.path.dirname(output)) > 0:
            os.makedirs(os.path.dirname(output), exist_ok=True)
        report.save(output)
        return None


class InferCommand(AbstractCommand):
    """
    Predicts the label grid of a single point cloud.
    """

    def _define_options(self):
        super()._define_options()
        self._option_manager.add(Option(name="checkpoint", value_type=File, def_value=File(""),
                                        help="The checkpoint to use"))
        self._option_manager.add(Option(name="points", value_type=File, def_value=File(""),
                                        help="The point cloud (float32 x, y, z, intensity)"))
        self._option_manager.add(Option(name="output", value_type=File, def_value=File(""),
                                        help="The label file to write"))
        self._option_manager.add(Option(name="export_csv", value_type=File, def_value=File(""),
                                        help="The CSV file with the occupied voxels, optional"))

    def _check(self):
        return self._require("checkpoint", "points", "output")

    def _do_execute(self):
        config = None if len(self.get("config")) == 0 else self.load_run_config()
        model, config = load_model(self.get("checkpoint"), config)
        grid = predict_points(model, read_points(self.get("points")))
        write_predictions(grid, self.get("output"), get_remap(config.data.get("remap")))
        if len(self.get("export_csv")) > 0:
            rows = export_csv(grid, self.get("export_csv"))
            self.log("Exported %d occupied voxels to %s" % (rows, self.get("export_csv")))
        return None


class GradcheckCommand(AbstractCommand):
    """
    Runs the finite-difference gradient suite.
    """

    def _define_options(self):
        super()._define_options()
        self._option_manager.add(Option(name="scale", value_type=str, def_value=SCALE_TINY,
                                        help="The problem size"))
        self._option_manager.add(Option(name="seed", value_type=int, def_value=1,
                                        help="The seed for the random inputs"))

    def _initialize(self):
        super()._initialize()
        self.results: List[CheckResult] = []

    def _do_execute(self):
        self._job = GradientSuite(scale=self.get("scale"), seed=self.get("seed"))
        self.results = self._job.run(fail=False)
        failed = [r for r in self.results if not r.passed]
        if len(failed) > 0:
            suite_error = "Gradient checks failed: %s" % ", ".join(r.name for r in failed)
            self.exit_code = EXIT_NUMERICAL
            return suite_error
        return None


COMMANDS = {
    "synth": SynthCommand,
    "train": TrainCommand,
    "eval": EvalCommand,
    "infer": InferCommand,
    "gradcheck": GradcheckCommand,
}
