"""Reference learners: experience replay (ER), plain sequential SGD and JOINT.

These are written independently of :class:`scommer.trainer.SCoMMER` so the
reduction property (SCoMMER with its mechanisms switched off equals ER/SGD)
checks two separate code paths.
"""

import numpy as np

from .memory import EpisodicMemory
from .tensor_net import SGD, cross_entropy, small_conv
from .trainer import StepInfo, random_crop


class SGDLearner:
    """Fine-tunes one dense ReLU network on whatever batches it is given."""

    method = "sgd"

    def __init__(self, cfg, input_shape, n_classes, rngs):
        self.cfg, self.rngs = cfg, rngs
        self.working = small_conv(input_shape, n_classes, cfg.model.channels, cfg.model.hidden,
                                  ratios=None, rng=rngs["init"])
        self.optimizer = SGD(cfg.training.lr, cfg.training.momentum, cfg.training.weight_decay)
        self.stable = None
        self.activity = None

    @property
    def reported(self):
        return self.working

    def models(self):
        return {"working": self.working}

    def _fit(self, x, y):
        if self.cfg.buffer.augment:
            x = random_crop(x, self.rngs["augment"])
        fwd = self.working.forward(x, mode="train")
        loss, grad = cross_entropy(fwd.logits, y)
        self.optimizer.step(self.working, self.working.backward(grad, fwd))
        return loss

    def train_step(self, x_t, y_t, task_id):
        return StepInfo(self._fit(x_t, y_t), False, None, 0, 0)

    def start_epoch(self, epoch):
        pass

    def end_epoch(self, epoch):
        return False

    def end_task(self, task_id):
        return False


class ER(SGDLearner):
    """Interleaves each task batch with a uniform replay batch from a reservoir buffer."""

    method = "er"

    def __init__(self, cfg, input_shape, n_classes, rngs):
        super().__init__(cfg, input_shape, n_classes, rngs)
        self.memory = EpisodicMemory(cfg.buffer.size, input_shape)

    def train_step(self, x_t, y_t, task_id):
        replay = self.memory.sample(self.cfg.buffer.batch_size, self.rngs["replay"])
        if replay is None:
            x, y = x_t, y_t
        else:
            x, y = np.concatenate([x_t, replay[0]]), np.concatenate([y_t, replay[1]])
        loss = self._fit(x, y)
        self.memory.extend(x_t, y_t, task_id, self.rngs["reservoir"])
        return StepInfo(loss, replay is not None, None, 0, 0)
