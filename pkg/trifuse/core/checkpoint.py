"""
"TRIF" container files

Layout (little-endian):
    magic b"TRIF" | u32 version | u32 entry count
    per entry: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | float32 payload

Checkpoints, NIQE models and BRISQUE regressors all use this container.
The run configuration travels as the ``__config__`` entry: sorted-key JSON,
one byte per float32 element.
"""
import json
import struct
from pathlib import Path
from typing import Dict, Mapping, Tuple, Union

import numpy as np
from loguru import logger

from trifuse.core.config import RunConfig, build_run_config
from trifuse.core.exceptions import CheckpointError

MAGIC = b"TRIF"
VERSION = 1
CONFIG_ENTRY = "__config__"

_HEADER = struct.Struct("<4sII")
_NAME_LEN = struct.Struct("<H")
_RANK = struct.Struct("<B")

PathLike = Union[str, Path]


def encode_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def decode_text(array: np.ndarray) -> str:
    codes = np.asarray(array).reshape(-1)
    if codes.size and (codes.min() < 0 or codes.max() > 255 or np.any(codes != np.round(codes))):
        raise CheckpointError("text entry holds values outside the byte range")
    try:
        return codes.astype(np.uint8).tobytes().decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointError(f"text entry is not valid UTF-8: {e}") from e


def write_container(path: PathLike, entries: Mapping[str, np.ndarray]) -> None:
    """
    Write named float32 arrays in the given order

    Args:
        path: Destination file (parent directories are created)
        entries: Name -> array; arrays are cast to float32
    """
    path = Path(path)
    chunks = [_HEADER.pack(MAGIC, VERSION, len(entries))]
    for name, array in entries.items():
        encoded = name.encode("utf-8")
        if not encoded or len(encoded) > 0xFFFF:
            raise CheckpointError(f"entry name length must be 1..65535 bytes: {name!r}")
        data = np.asarray(array, dtype="<f4")
        if data.ndim > 0xFF:
            raise CheckpointError(f"entry {name!r} has rank {data.ndim}")
        chunks.append(_NAME_LEN.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_RANK.pack(data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))


def read_container(path: PathLike) -> Dict[str, np.ndarray]:
    """
    Read every entry of a container file

    Returns:
        Name -> float32 array, in file order

    Raises:
        FileNotFoundError: Missing file
        CheckpointError: Bad magic, version or truncated payload
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    blob = path.read_bytes()
    try:
        magic, version, count = _HEADER.unpack_from(blob, 0)
    except struct.error as e:
        raise CheckpointError(f"{path}: truncated header") from e
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a TRIF file (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")

    offset = _HEADER.size
    entries: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = _NAME_LEN.unpack_from(blob, offset)
            offset += _NAME_LEN.size
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = _RANK.unpack_from(blob, offset)
            offset += _RANK.size
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if offset + 4 * size > len(blob):
                raise CheckpointError(f"{path}: entry {name!r} is truncated")
            entries[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=offset).reshape(shape).copy()
            offset += 4 * size
    except (struct.error, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt entry table") from e
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return entries


def config_to_text(config: RunConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), sort_keys=True)


def save_checkpoint(path: PathLike, state: Mapping[str, np.ndarray], config: RunConfig) -> None:
    """
    Write a model checkpoint

    Args:
        path: Destination file
        state: Parameters and buffers (``ModelParams.state()``)
        config: Run configuration embedded as ``__config__``
    """
    if CONFIG_ENTRY in state:
        raise CheckpointError(f"{CONFIG_ENTRY!r} is reserved")
    entries = {CONFIG_ENTRY: encode_text(config_to_text(config))}
    entries.update(state)
    write_container(path, entries)
    logger.debug(f"✅ Checkpoint written: {path} ({len(state)} arrays)")


def load_checkpoint(path: PathLike) -> Tuple[RunConfig, Dict[str, np.ndarray]]:
    """
    Read a checkpoint

    Returns:
        (embedded RunConfig, parameter/buffer arrays)
    """
    entries = read_container(path)
    if CONFIG_ENTRY not in entries:
        raise CheckpointError(f"{path}: no {CONFIG_ENTRY} entry; not a checkpoint")
    try:
        values = json.loads(decode_text(entries.pop(CONFIG_ENTRY)))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: embedded configuration is not JSON") from e
    return build_run_config(values), entries
