import os
from typing import List, Optional

import numpy as np
from coed.logging import LoggableObject

from .checkpoint import checkpoint_read, checkpoint_write, load_into
from .config import RunConfig
from .dataset import Batch, SceneDataset, SceneSample
from .errors import DataError, UsageError
from .io import RUN_CONFIG_NAME, save_config
from .losses import LOG_COLUMNS, LossReport, compute_losses
from .network import SSCRSModel
from .optim import Adam, OPTIM_PREFIX
from .stopping import Stoppable
from .tensor import Tape, backward

LOG_NAME = "train.log"
LAST_CHECKPOINT = "last.sscr"
EPOCH_KEY = OPTIM_PREFIX + "epoch"


def epoch_checkpoint_name(epoch: int) -> str:
    return "epoch_%d.sscr" % epoch


def flip_seed(seed: int, epoch: int, index: int) -> List[int]:
    """
    The augmentation seed of a sample, independent of batching.
    """
    return [int(seed), int(epoch), int(index)]


class Trainer(LoggableObject, Stoppable):
    """
    Trains the model with Adam on the multi-task loss, writing a line-oriented loss log
    and a checkpoint per epoch.
    """

    def __init__(self, config: RunConfig, output_dir: str, debug: bool = False):
        """
        Initializes the trainer.

        :param config: the run configuration
        :type config: RunConfig
        :param output_dir: the directory for log, checkpoints and run.conf
        :type output_dir: str
        :param debug: whether to log the losses of every step
        :type debug: bool
        """
        super().__init__()
        self.config = config
        self.output_dir = output_dir
        self.debug = debug
        self.spec = config.grid_spec()
        self.model = SSCRSModel(config.model, self.spec)
        t = config.train
        self.optimizer = Adam(self.model.params, lr=t.get("lr"), beta1=t.get("beta1"), beta2=t.get("beta2"),
                              eps=t.get("eps"))
        self.epoch = 0
        self.history = []
        self._stopped = False

    def _check(self, dataset: SceneDataset):
        t = self.config.train
        if t.get("batch_size") < 1:
            raise UsageError("train.batch_size must be at least 1")
        if t.get("epochs") < 0 or t.get("max_steps") < 0:
            raise UsageError("train.epochs and train.max_steps must not be negative")
        if len(dataset) == 0:
            raise DataError("No scenes in dataset: %s" % dataset.directory)
        if dataset.remap.num_classes != self.model.num_classes:
            raise UsageError("Dataset remap '%s' has %d classes, model.num_classes is %d"
                             % (dataset.remap.name, dataset.remap.num_classes, self.model.num_classes))

    def resume(self, path: str):
        """
        Restores parameters, optimizer moments, step count and epoch from the checkpoint.

        :param path: the checkpoint
        :type path: str
        """
        state = load_into(path, self.model.params)
        if state is not None:
            self.optimizer.state = state
        tensors = checkpoint_read(path)
        if EPOCH_KEY in tensors:
            self.epoch = int(np.asarray(tensors[EPOCH_KEY]).reshape(-1)[0])
        self.log("Resumed from %s: epoch %d, step %d" % (path, self.epoch, self.optimizer.state.step))

    def _augment(self, samples: List[SceneSample], start: int) -> List[SceneSample]:
        if not self.config.train.get("flip"):
            return samples
        seed = self.config.train.get("seed")
        return [s.flipped(self.spec, flip_seed(seed, self.epoch, start + i)) for i, s in enumerate(samples)]

    def step(self, samples: List[SceneSample]) -> LossReport:
        """
        Performs one optimizer step on the batch.

        :param samples: the scenes of the batch
        :type samples: list
        :return: the losses (before the update)
        :rtype: LossReport
        """
        batch = Batch.collate(samples)
        lc = self.config.loss
        with Tape() as tape:
            output = self.model.forward(batch.points, batch.occupancy, training=True)
            total, report = compute_losses(
                output, batch.targets,
                bev_weight=lc.get("bev_weight"), semantic_weight=lc.get("semantic_weight"),
                completion_weight=lc.get("completion_weight"),
                multi_scale_supervision=lc.get("multi_scale_supervision"))
        if not np.isfinite(report.l_total):
            raise DataError("Non-finite loss at step %d" % (self.optimizer.state.step + 1))
        grads = backward(tape, total, self.model.params.as_dict())
        self.optimizer.step(grads)
        return report

    def _log_line(self, line: str):
        path = os.path.join(self.output_dir, LOG_NAME)
        new = not os.path.exists(path) or os.path.getsize(path) == 0
        with open(path, "a", encoding="utf-8") as f:
            if new:
                f.write(" ".join(LOG_COLUMNS) + "\n")
            f.write(line + "\n")

    def _save(self):
        extra = {EPOCH_KEY: np.asarray([self.epoch], dtype=np.float32)}
        for name in [epoch_checkpoint_name(self.epoch), LAST_CHECKPOINT]:
            checkpoint_write(os.path.join(self.output_dir, name), self.model.params, self.optimizer.state, extra)

    def train(self, dataset: SceneDataset) -> List[LossReport]:
        """
        Runs the training.

        :param dataset: the training scenes
        :type dataset: SceneDataset
        :return: the loss report of every step
        :rtype: list
        """
        self._check(dataset)
        os.makedirs(self.output_dir, exist_ok=True)
        save_config(self.config, os.path.join(self.output_dir, RUN_CONFIG_NAME))
        counts = self.model.parameter_counts()
        self.log("Parameters: " + ", ".join("%s=%d" % (k, v) for k, v in sorted(counts.items())))

        t = self.config.train
        epochs = t.get("epochs")
        max_steps = t.get("max_steps")
        batch_size = t.get("batch_size")
        self._stopped = False
        samples = dataset.load_all()
        while self.epoch < epochs and not self._stopped:
            done = 0
            for start in range(0, len(samples), batch_size):
                if max_steps > 0 and self.optimizer.state.step >= max_steps:
                    self._stopped = True
                if self._stopped:
                    break
                report = self.step(self._augment(samples[start:start + batch_size], start))
                self.history.append(report)
                self._log_line(report.to_line(self.epoch, self.optimizer.state.step))
                if self.debug:
                    self.log("epoch %d step %d: %s" % (self.epoch, self.optimizer.state.step, str(report)))
                done += 1
            # nothing left to do in this epoch, keep the last checkpoint as is
            if done == 0:
                break
            self.epoch += 1
            self._save()
            self.log("Epoch %d done, step %d" % (self.epoch, self.optimizer.state.step))
        return self.history

    def stop_execution(self):
        self._stopped = True

    @property
    def is_stopped(self) -> bool:
        return self._stopped


def train(config: RunConfig, data_dir: str, output_dir: str, resume: Optional[str] = None) -> Trainer:
    """
    Trains a model on the dataset directory.

    :param config: the run configuration
    :type config: RunConfig
    :param data_dir: the dataset directory
    :type data_dir: str
    :param output_dir: where to store log, checkpoints and run.conf
    :type output_dir: str
    :param resume: the checkpoint to resume from, optional
    :type resume: str
    :return: the trainer after training
    :rtype: Trainer
    """
    dataset = SceneDataset(data_dir, config.grid_spec(), num_threads=config.train.get("num_threads"))
    trainer = Trainer(config, output_dir)
    if resume is not None:
        trainer.resume(resume)
    trainer.train(dataset)
    return trainer
