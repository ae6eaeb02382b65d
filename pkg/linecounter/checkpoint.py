"""
Binary checkpoint format (all integers u32 little-endian):

    b"LCNT" | version | len(config) | config JSON (utf-8)
    | per entry, until the CRC byte: len(name) | name (utf-8) | rank | extents... | float32 LE data
    | CRC-8 of every preceding byte (1 byte)

Entries are the model parameters by dotted name, then BatchNorm running
statistics under "buffer.<name>", then Adam moments under "optim.m.<name>" and
"optim.v.<name>" when an optimizer is saved. The config JSON holds the model
config, the init seed, the optimizer scalars and any caller metadata.
"""
import json
import logging
import os
import struct

import numpy as np

from linecounter.errors import FormatError
from linecounter.model import ModelConfig, build
from linecounter.utils import getCRC

logger = logging.getLogger(__name__)

MAGIC = b"LCNT"
VERSION = 1
BUFFER_PREFIX = "buffer."
ADAM_M_PREFIX = "optim.m."
ADAM_V_PREFIX = "optim.v."


def packCheckpoint(config, entries):
    """
    Args:
        config (dict): JSON-serializable header.
        entries (list[tuple]): (name, ndarray) in file order.

    Returns:
        bytes: Complete file contents including the CRC byte.
    """
    header = json.dumps(config, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for name, array in entries:
        raw_name = name.encode("utf-8")
        array = np.asarray(array)
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<B", getCRC(body))


def unpackCheckpoint(raw, source="checkpoint"):
    """Parse packCheckpoint output back into (config dict, {name: float32 ndarray})."""
    if len(raw) < 13:
        raise FormatError(f"{source}: file too short ({len(raw)} bytes)", field="length")
    body, (crc,) = raw[:-1], struct.unpack("<B", raw[-1:])
    if getCRC(body) != crc:
        raise FormatError(f"{source}: CRC mismatch", field="crc")
    if body[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {body[:4]!r}", field="magic")

    offset = 4
    version, header_len = struct.unpack_from("<II", body, offset)
    offset += 8
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}", field="version")
    try:
        config = json.loads(body[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{source}: unreadable config ({e})", field="config") from None
    offset += header_len

    entries = {}
    try:
        while offset < len(body):
            (name_len,) = struct.unpack_from("<I", body, offset)
            offset += 4
            name = body[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", body, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", body, offset)
            offset += 4 * rank
            nbytes = 4 * int(np.prod(shape, dtype=np.int64))
            if offset + nbytes > len(body):
                raise FormatError(f"{source}: entry {name} is truncated", field="data")
            entries[name] = np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).copy()
            offset += nbytes
    except struct.error as e:
        raise FormatError(f"{source}: truncated entry table ({e})", field="entries") from None
    if offset != len(body):
        raise FormatError(f"{source}: {len(body) - offset} trailing bytes", field="length")
    return config, entries


def saveCheckpoint(path, model, optimizer=None, metadata=None):
    """
    Write the model (and optionally Adam state) to `path` atomically.

    Args:
        path (str): Destination file.
        model (LineCounterModel): Model to save.
        optimizer (Adam): Optional optimizer whose moments and step are saved.
        metadata (dict): Extra JSON-serializable fields stored in the header.
    """
    config = {"model": model.config.toDict(), "seed": model.seed, "metadata": metadata or {}}
    entries = [(name, param.data) for name, param in model.namedParameters()]
    entries += [(BUFFER_PREFIX + name, buffer) for name, buffer in model.namedBuffers()]
    if optimizer is not None:
        config["optim"] = {"t": optimizer.t, "lr": optimizer.lr}
        params = list(model.namedParameters())
        entries += [(ADAM_M_PREFIX + name, param.adam_m) for name, param in params]
        entries += [(ADAM_V_PREFIX + name, param.adam_v) for name, param in params]

    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(packCheckpoint(config, entries))
    os.replace(tmp_path, path)
    logger.debug(f"Saved checkpoint {path} ({len(entries)} entries)")


def loadCheckpoint(path, optimizer_factory=None):
    """
    Rebuild a model from a checkpoint.

    Args:
        path (str): Checkpoint file.
        optimizer_factory (callable): Optional params -> Adam; when given and the file
            carries optimizer state, the returned optimizer is restored too.

    Returns:
        tuple: (model, optimizer or None, header dict).
    """
    with open(path, "rb") as f:
        config, entries = unpackCheckpoint(f.read(), source=path)
    model = build(ModelConfig.fromDict(config["model"]), seed=config.get("seed", 0))

    for name, param in model.namedParameters():
        param.data[...] = _entry(entries, name, param.shape, path)
    for name, buffer in model.namedBuffers():
        buffer[...] = _entry(entries, BUFFER_PREFIX + name, buffer.shape, path)

    optimizer = None
    if optimizer_factory is not None:
        optimizer = optimizer_factory(model.parameters())
        if "optim" in config:
            optimizer.t = int(config["optim"]["t"])
            optimizer.lr = float(config["optim"]["lr"])
            for name, param in model.namedParameters():
                param.adam_m[...] = _entry(entries, ADAM_M_PREFIX + name, param.shape, path)
                param.adam_v[...] = _entry(entries, ADAM_V_PREFIX + name, param.shape, path)
    return model, optimizer, config


def _entry(entries, name, shape, path):
    if name not in entries:
        raise FormatError(f"{path}: missing entry {name}", field=name)
    value = entries[name]
    if value.shape != tuple(shape):
        raise FormatError(f"{path}: entry {name} has shape {value.shape}, model expects {tuple(shape)}", field=name)
    return value
