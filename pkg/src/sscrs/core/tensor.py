import contextlib
import threading
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

DTYPE_32 = np.float32
DTYPE_64 = np.float64

_state = threading.local()


def get_default_dtype():
    """
    Returns the floating point type new tensors use (32-bit unless changed).

    :return: the numpy dtype
    """
    return getattr(_state, "dtype", DTYPE_32)


def set_default_dtype(dtype):
    """
    Sets the floating point type for new tensors of the current thread.

    :param dtype: np.float32 or np.float64
    """
    dtype = np.dtype(dtype).type
    if dtype not in (DTYPE_32, DTYPE_64):
        raise ValueError("Unsupported dtype: %s" % str(dtype))
    _state.dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """
    Context manager that temporarily switches the default dtype (eg 64-bit for gradient checks).

    :param dtype: the dtype to use inside the block
    """
    old = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


class Tensor:
    """
    N-dimensional array (row-major numpy storage) that takes part in reverse-mode
    differentiation when it requires gradients.
    """

    def __init__(self, data, requires_grad: bool = False, name: str = None):
        """
        Initializes the tensor.

        :param data: the values, converted to the default dtype unless already floating point
        :param requires_grad: whether gradients get computed for this tensor
        :type requires_grad: bool
        :param name: optional name (eg parameter name)
        :type name: str
        """
        a = np.asarray(data)
        if not np.issubdtype(a.dtype, np.floating):
            a = a.astype(get_default_dtype())
        self.data = a
        self.requires_grad = requires_grad
        self.grad = None
        self.node = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self):
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return "Tensor(shape=%s, dtype=%s%s)" % (str(self.shape), str(self.dtype),
                                                 ", requires_grad=True" if self.requires_grad else "")

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False) -> 'Tensor':
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> 'Tensor':
        return mean(self, axis=axis, keepdims=keepdims)


TensorLike = Union[Tensor, np.ndarray, float, int]


class TapeRecord:
    """
    A single recorded operation.
    """

    def __init__(self, op: str, inputs: List[Tensor], input_nodes: List[int], output_node: int, backward: Callable):
        self.op = op
        self.inputs = inputs
        self.input_nodes = input_nodes
        self.output_node = output_node
        self.backward = backward


class Tape:
    """
    Records differentiable operations in execution (hence topological) order.
    A tape belongs to a single thread and a single training step.

    Usage:

        with Tape() as tape:
            loss = model(...)
        backward(tape, loss)
    """

    def __init__(self):
        self._records = []
        self._tensors = []
        self._nodes = dict()

    @property
    def records(self) -> List[TapeRecord]:
        return self._records

    def node_of(self, t: Tensor) -> int:
        """
        Returns (and assigns if necessary) the node id of the tensor on this tape.

        :param t: the tensor
        :type t: Tensor
        :return: the node id
        :rtype: int
        """
        key = id(t)
        if key not in self._nodes:
            self._nodes[key] = len(self._tensors)
            self._tensors.append(t)
        t.node = self._nodes[key]
        return self._nodes[key]

    def has_node(self, t: Tensor) -> bool:
        return id(t) in self._nodes

    def tensor(self, node: int) -> Tensor:
        return self._tensors[node]

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: Callable):
        """
        Records the operation.

        :param op: the name of the operation
        :type op: str
        :param inputs: the input tensors
        :type inputs: list
        :param output: the generated tensor
        :type output: Tensor
        :param backward: maps the output gradient to the list of input gradients (None for no gradient)
        :type backward: callable
        """
        input_nodes = [self.node_of(t) for t in inputs]
        output_node = self.node_of(output)
        self._records.append(TapeRecord(op, list(inputs), input_nodes, output_node, backward))

    def __enter__(self):
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = []
            _state.tapes = stack
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        _state.tapes.pop()
        return False

    def __len__(self):
        return len(self._records)


def current_tape() -> Optional[Tape]:
    """
    Returns the innermost active tape of the current thread.

    :return: the tape, None if not recording
    :rtype: Tape
    """
    stack = getattr(_state, "tapes", None)
    if not stack:
        return None
    return stack[-1]


@contextlib.contextmanager
def no_grad():
    """
    Suspends recording, eg for inference.
    """
    old = getattr(_state, "tapes", None)
    _state.tapes = []
    try:
        yield
    finally:
        _state.tapes = old


def as_tensor(x: TensorLike, dtype=None) -> Tensor:
    """
    Wraps constants as (non-differentiable) tensors.

    :param x: the value
    :param dtype: the dtype for non-tensor values, default dtype if None
    :return: the tensor
    :rtype: Tensor
    """
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = get_default_dtype()
    return Tensor(np.asarray(x, dtype=dtype))


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """
    Wraps the computed data as tensor and records the operation if any input requires gradients
    and a tape is active.

    :param op: the name of the operation
    :type op: str
    :param data: the result values
    :type data: np.ndarray
    :param inputs: the input tensors
    :type inputs: list
    :param backward: the backward rule
    :type backward: callable
    :return: the result
    :rtype: Tensor
    """
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, backward)
    return out


def unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """
    Sums the gradient over the axes that got broadcast to reach its shape.

    :param g: the gradient of the broadcast result
    :type g: np.ndarray
    :param shape: the shape of the original operand
    :type shape: tuple
    :return: the reduced gradient
    :rtype: np.ndarray
    """
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _pair(a: TensorLike, b: TensorLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = as_tensor(b, a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = as_tensor(a, b.dtype)
    else:
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return [unbroadcast(g, a.shape), unbroadcast(g, b.shape)]

    return make_result("add", a.data + b.data, [a, b], _backward)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return [unbroadcast(g, a.shape), unbroadcast(-g, b.shape)]

    return make_result("sub", a.data - b.data, [a, b], _backward)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return [unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)]

    return make_result("mul", a.data * b.data, [a, b], _backward)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return [unbroadcast(g / b.data, a.shape), unbroadcast(-g * a.data / (b.data * b.data), b.shape)]

    return make_result("div", a.data / b.data, [a, b], _backward)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    """
    Multiplies the tensor with a constant.

    :param a: the tensor
    :type a: Tensor
    :param s: the constant
    :type s: float
    :return: the scaled tensor
    :rtype: Tensor
    """
    s = a.dtype.type(s)

    def _backward(g):
        return [g * s]

    return make_result("scalar_mul", a.data * s, [a], _backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError("matmul expects MxK and KxN, got %s and %s" % (str(a.shape), str(b.shape)))

    def _backward(g):
        return [g @ b.data.T, a.data.T @ g]

    return make_result("matmul", a.data @ b.data, [a, b], _backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is None:
            return [np.broadcast_to(g, a.shape).copy()]
        if not keepdims:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g, a.shape).copy()]

    return make_result("sum", np.asarray(data, dtype=a.dtype), [a], _backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    if n == 0:
        raise ValueError("Mean over empty selection!")
    return scalar_mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    def _backward(g):
        return [g.reshape(a.shape)]

    return make_result("reshape", a.data.reshape(shape), [a], _backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def _backward(g):
        return [np.transpose(g, inverse)]

    return make_result("transpose", np.transpose(a.data, axes), [a], _backward)


def getitem(a: Tensor, index) -> Tensor:
    """
    Indexing (slices, integer arrays, masks) with gradients accumulated back into the source.

    :param a: the tensor to index
    :type a: Tensor
    :param index: the numpy-style index
    :return: the selection
    :rtype: Tensor
    """
    if isinstance(index, Tensor):
        index = index.data
    if isinstance(index, np.ndarray) and index.dtype == bool:
        index = np.nonzero(index)

    def _backward(g):
        result = np.zeros_like(a.data)
        np.add.at(result, index, g)
        return [result]

    return make_result("getitem", np.array(a.data[index], copy=True), [a], _backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """
    Concatenates the tensors along the axis.

    :param tensors: the tensors
    :type tensors: list
    :param axis: the axis to join along
    :type axis: int
    :return: the joined tensor
    :rtype: Tensor
    """
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 0:
        raise ValueError("Nothing to concatenate!")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _backward(g):
        result = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
            result.append(g[tuple(sl)])
        return result

    return make_result("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, _backward)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def _backward(g):
        return [g * y]

    return make_result("exp", y, [a], _backward)


def log(a: Tensor) -> Tensor:
    def _backward(g):
        return [g / a.data]

    return make_result("log", np.log(a.data), [a], _backward)


def backward(tape: Tape, loss: Tensor, params: Optional[Dict[str, Tensor]] = None) -> Optional[Dict[str, np.ndarray]]:
    """
    Propagates the gradient of the scalar loss back through the tape and stores the result
    in the 'grad' attribute of every tensor that requires gradients. Parameters that don't
    contribute to the loss receive zero gradients.

    :param tape: the tape the loss was computed on
    :type tape: Tape
    :param loss: the scalar loss
    :type loss: Tensor
    :param params: the parameters (name -> tensor) to collect gradients for
    :type params: dict
    :return: the gradients per parameter name if params supplied, otherwise None
    :rtype: dict
    """
    if loss.size != 1:
        raise ValueError("Loss must be a scalar, got shape: %s" % str(loss.shape))

    grads = dict()
    if loss.requires_grad and tape.has_node(loss):
        grads[tape.node_of(loss)] = np.ones_like(loss.data)

    for rec in reversed(tape.records):
        g = grads.pop(rec.output_node, None)
        if g is None:
            continue
        input_grads = rec.backward(g)
        for t, node, ig in zip(rec.inputs, rec.input_nodes, input_grads):
            if ig is None or not t.requires_grad:
                continue
            if node in grads:
                grads[node] = grads[node] + ig
            else:
                grads[node] = ig

    # whatever remains belongs to leaves
    for node, g in grads.items():
        t = tape.tensor(node)
        t.grad = np.asarray(g, dtype=t.dtype).reshape(t.shape)

    if params is None:
        return None
    result = dict()
    for name in sorted(params.keys()):
        p = params[name]
        if (not tape.has_node(p)) or (tape.node_of(p) not in grads):
            p.grad = np.zeros_like(p.data)
        result[name] = p.grad
    return result
