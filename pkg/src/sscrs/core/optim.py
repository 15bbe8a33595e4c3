from typing import Dict

import numpy as np

from .storage import ParamRegistry

OPTIM_PREFIX = "optim."


class AdamState:
    """
    First/second moment estimates per parameter plus the number of steps taken.
    """

    def __init__(self):
        self.step = 0
        self.m = dict()
        self.v = dict()

    def to_tensors(self) -> Dict[str, np.ndarray]:
        """
        Flattens the state into a name -> array table (for checkpoints).

        :return: the table
        :rtype: dict
        """
        result = dict()
        for name in sorted(self.m.keys()):
            result[OPTIM_PREFIX + "m." + name] = self.m[name]
            result[OPTIM_PREFIX + "v." + name] = self.v[name]
        result[OPTIM_PREFIX + "step"] = np.asarray([self.step], dtype=np.float32)
        return result

    @classmethod
    def from_tensors(cls, table: Dict[str, np.ndarray]) -> 'AdamState':
        """
        Restores the state from a checkpoint table (non-optimizer entries are ignored).

        :param table: the name -> array table
        :type table: dict
        :return: the state
        :rtype: AdamState
        """
        result = cls()
        for name, values in table.items():
            if name.startswith(OPTIM_PREFIX + "m."):
                result.m[name[len(OPTIM_PREFIX + "m."):]] = np.array(values)
            elif name.startswith(OPTIM_PREFIX + "v."):
                result.v[name[len(OPTIM_PREFIX + "v."):]] = np.array(values)
        if OPTIM_PREFIX + "step" in table:
            result.step = int(np.asarray(table[OPTIM_PREFIX + "step"]).reshape(-1)[0])
        return result


def adam_step(params: ParamRegistry, grads: Dict[str, np.ndarray], state: AdamState,
              lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """
    Performs one Adam update (with bias correction) of all parameters, in name order.

    :param params: the parameters to update in place
    :type params: ParamRegistry
    :param grads: the gradient per parameter name (missing = zero)
    :type grads: dict
    :param state: the optimizer state, updated in place
    :type state: AdamState
    :param lr: the learning rate
    :type lr: float
    :param beta1: decay of the first moment
    :type beta1: float
    :param beta2: decay of the second moment
    :type beta2: float
    :param eps: added to the denominator
    :type eps: float
    :return: the updated state
    :rtype: AdamState
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(p.shape, dtype=np.float64)
            v = np.zeros(p.shape, dtype=np.float64)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.dtype)
    return state


class Adam:
    """
    Adam optimizer over a parameter registry.
    """

    def __init__(self, params: ParamRegistry, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self, grads: Dict[str, np.ndarray] = None):
        """
        Updates the parameters, using their 'grad' attribute unless gradients are supplied.

        :param grads: the gradients per name, optional
        :type grads: dict
        """
        if grads is None:
            grads = {k: v.grad for k, v in self.params.items() if v.grad is not None}
        adam_step(self.params, grads, self.state, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def zero_grad(self):
        self.params.zero_grad()
