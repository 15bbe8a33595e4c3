import os
import struct
from collections import OrderedDict
from typing import Dict

import numpy as np

from .errors import DataError
from .optim import AdamState, OPTIM_PREFIX
from .storage import ParamRegistry

MAGIC = b"SSCR"
VERSION = 1
VALUE_DTYPE = np.dtype("<f4")


def encode_checkpoint(tensors: Dict[str, np.ndarray]) -> bytes:
    """
    Serializes the named tensors (in name order): magic, version (u32), count (u32), then per
    tensor the name length (u16), the UTF-8 name, the rank (u8), the dims (u64 each) and the
    float32 values in row-major order. All little-endian.

    :param tensors: name -> values
    :type tensors: dict
    :return: the bytes
    :rtype: bytes
    """
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors.keys()):
        values = np.ascontiguousarray(np.asarray(tensors[name]), dtype=VALUE_DTYPE)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF or values.ndim > 0xFF:
            raise ValueError("Tensor name too long or rank too high: %s" % name)
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", values.ndim))
        parts.append(struct.pack("<%dQ" % values.ndim, *values.shape))
        parts.append(values.tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> Dict[str, np.ndarray]:
    """
    Parses the bytes generated by encode_checkpoint.

    :param data: the bytes
    :type data: bytes
    :return: name -> float32 values
    :rtype: dict
    """
    def _take(pos: int, n: int, what: str) -> int:
        if pos + n > len(data):
            raise DataError("Truncated checkpoint while reading %s (offset %d)" % (what, pos))
        return pos + n

    if len(data) < 12 or data[:4] != MAGIC:
        raise DataError("Not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise DataError("Unsupported checkpoint version: %d" % version)
    pos = 12
    result = OrderedDict()
    for i in range(count):
        end = _take(pos, 2, "name length")
        (length,) = struct.unpack_from("<H", data, pos)
        pos = end
        end = _take(pos, length, "name")
        try:
            name = data[pos:end].decode("utf-8")
        except UnicodeDecodeError:
            raise DataError("Invalid tensor name encoding (tensor #%d)" % i)
        pos = end
        end = _take(pos, 1, "rank")
        (rank,) = struct.unpack_from("<B", data, pos)
        pos = end
        end = _take(pos, 8 * rank, "dims")
        dims = struct.unpack_from("<%dQ" % rank, data, pos)
        pos = end
        # python ints, corrupt dims must not wrap around
        size = 1
        for d in dims:
            size *= int(d)
        end = _take(pos, 4 * size, "values of %s" % name)
        result[name] = np.frombuffer(data[pos:end], dtype=VALUE_DTYPE).reshape(dims).copy()
        pos = end
    if pos != len(data):
        raise DataError("Trailing bytes after %d tensors" % count)
    return result


def checkpoint_write(path: str, params: ParamRegistry, optimizer: AdamState = None, extra: Dict[str, np.ndarray] = None):
    """
    Writes parameters (and optionally the optimizer state) to the file.

    :param path: the file to write
    :type path: str
    :param params: the parameters
    :type params: ParamRegistry
    :param optimizer: the optimizer state, optional
    :type optimizer: AdamState
    :param extra: additional tensors to store, optional
    :type extra: dict
    """
    tensors = params.state()
    if optimizer is not None:
        tensors.update(optimizer.to_tensors())
    if extra is not None:
        tensors.update(extra)
    with open(path, "wb") as f:
        f.write(encode_checkpoint(tensors))


def checkpoint_read(path: str) -> Dict[str, np.ndarray]:
    if not os.path.isfile(path):
        raise DataError("Checkpoint does not exist: %s" % path)
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


def split_checkpoint(tensors: Dict[str, np.ndarray]):
    """
    Separates model parameters from optimizer state.

    :param tensors: the checkpoint content
    :type tensors: dict
    :return: the parameters, the optimizer state (None if not stored)
    :rtype: tuple
    """
    params = OrderedDict((k, v) for k, v in tensors.items() if not k.startswith(OPTIM_PREFIX))
    optim = OrderedDict((k, v) for k, v in tensors.items() if k.startswith(OPTIM_PREFIX))
    return params, (AdamState.from_tensors(optim) if len(optim) > 0 else None)


def load_into(path: str, params: ParamRegistry):
    """
    Loads the checkpoint into the registry, raising a DataError that names the first offending
    tensor if names or shapes don't match.

    :param path: the checkpoint
    :type path: str
    :param params: the registry to update
    :type params: ParamRegistry
    :return: the optimizer state, None if not stored
    :rtype: AdamState
    """
    values, optim = split_checkpoint(checkpoint_read(path))
    try:
        params.load_state(values, strict=True)
    except ValueError as e:
        raise DataError("Checkpoint %s does not match the model: %s" % (path, str(e)))
    return optim
