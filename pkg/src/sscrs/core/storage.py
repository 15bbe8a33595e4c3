import threading
from typing import Dict, Iterator, List, Tuple

import numpy as np

from .tensor import Tensor

VALID_CHARS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_."


def is_valid_name(s: str) -> bool:
    """
    Checks whether the string is a valid parameter name (dotted path like 'sem.block1.conv1.weight').

    :param s: the string to check
    :type s: str
    :return: True if valid
    :rtype: bool
    """
    if len(s) == 0 or s.startswith(".") or s.endswith(".") or ".." in s:
        return False
    for i in range(len(s)):
        if s[i] not in VALID_CHARS:
            return False
    return True


class ParamRegistry:
    """
    Manages the named parameters of a model. Names are unique, iteration is in lexicographic
    name order.
    """

    def __init__(self):
        """
        Initializes the registry.
        """
        self._data = dict()
        self._mutex = threading.Semaphore(1)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        """
        Adds the parameter under the specified name.

        :param name: the unique name
        :type name: str
        :param tensor: the parameter, gets flagged as requiring gradients
        :type tensor: Tensor
        :return: the tensor
        :rtype: Tensor
        """
        if not is_valid_name(name):
            raise ValueError("Invalid parameter name: %s" % name)
        self._mutex.acquire()
        try:
            if name in self._data:
                raise ValueError("Parameter already registered: %s" % name)
            tensor.requires_grad = True
            tensor.name = name
            self._data[name] = tensor
        finally:
            self._mutex.release()
        return tensor

    def has(self, name: str) -> bool:
        self._mutex.acquire()
        result = name in self._data
        self._mutex.release()
        return result

    def get(self, name: str) -> Tensor:
        """
        Returns the parameter.

        :param name: the name of the parameter
        :type name: str
        :return: the parameter, None if not available
        :rtype: Tensor
        """
        self._mutex.acquire()
        result = self._data.get(name)
        self._mutex.release()
        return result

    def keys(self) -> List[str]:
        """
        Returns the names of all parameters.

        :return: the sorted names
        :rtype: list
        """
        self._mutex.acquire()
        result = sorted(self._data.keys())
        self._mutex.release()
        return result

    def items(self) -> List[Tuple[str, Tensor]]:
        return [(k, self._data[k]) for k in self.keys()]

    def as_dict(self) -> Dict[str, Tensor]:
        return dict(self.items())

    def subset(self, prefix: str) -> List[Tuple[str, Tensor]]:
        """
        Returns the parameters whose name starts with the prefix.

        :param prefix: the prefix, eg 'sem.'
        :type prefix: str
        :return: the matching (name, tensor) pairs
        :rtype: list
        """
        return [(k, v) for k, v in self.items() if k.startswith(prefix)]

    def num_parameters(self, prefix: str = "") -> int:
        return int(sum(v.size for _, v in self.subset(prefix)))

    def zero_grad(self):
        for _, v in self.items():
            v.zero_grad()

    def state(self) -> Dict[str, np.ndarray]:
        """
        Returns copies of the parameter values.

        :return: name -> values
        :rtype: dict
        """
        return {k: v.data.copy() for k, v in self.items()}

    def load_state(self, state: Dict[str, np.ndarray], strict: bool = True):
        """
        Copies the values into the parameters. Raises a ValueError naming the first
        (in name order) parameter that is missing or whose shape differs.

        :param state: name -> values
        :type state: dict
        :param strict: whether unexpected names are errors as well
        :type strict: bool
        """
        for name, p in self.items():
            if name not in state:
                raise ValueError("Missing parameter: %s" % name)
            values = np.asarray(state[name])
            if values.shape != p.shape:
                raise ValueError("Shape mismatch for parameter %s: expected %s, got %s"
                                 % (name, str(p.shape), str(values.shape)))
        if strict:
            for name in sorted(state.keys()):
                if not self.has(name):
                    raise ValueError("Unexpected parameter: %s" % name)
        for name, p in self.items():
            p.data = np.asarray(state[name], dtype=p.dtype).copy()

    def merge(self, other: 'ParamRegistry') -> 'ParamRegistry':
        """
        Incorporates the parameters of the other registry (names must not clash).

        :param other: the registry to merge
        :type other: ParamRegistry
        :return: itself
        :rtype: ParamRegistry
        """
        for name, p in other.items():
            self.add(name, p)
        return self

    def __iter__(self) -> Iterator[str]:
        return iter(self.keys())

    def __len__(self):
        return len(self._data)

    def __contains__(self, name):
        return self.has(name)

    def __str__(self):
        return ", ".join("%s%s" % (k, str(v.shape)) for k, v in self.items())
