"""Checkpoint files: a JSON header followed by tensor-file records.

Layout::

    b"RGCK" | u32 version | u32 header length | UTF-8 JSON header | RGT1 records...

The header lists record names in order, the resolved config, the step
counter and the sampler's bit-generator state.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict

import numpy as np

from ..dataio import FormatError, decode_tensor, encode_tensor
from .config import TrainConfig
from .trainer import Trainer

MAGIC = b"RGCK"
VERSION = 1
# fields that change parameter shapes; a mismatch makes the weights unusable
SHAPE_FIELDS = ("input_shape", "stem_channels", "stem_stride", "body_channels", "body_strides", "num_nodes", "feat_dim")


class CheckpointError(ValueError):
    pass


def _jsonable(config: TrainConfig) -> Dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in config.to_dict().items()}


def checkpoint_save(path, trainer: Trainer) -> None:
    records = []
    names = []
    for name, value in trainer.model.state_dict().items():
        names.append("model:" + name)
        records.append(encode_tensor(np.asarray(value)))
    for name, buf in trainer.optimizer.buffers.items():
        names.append("momentum:" + name)
        records.append(encode_tensor(buf))
    header = {
        "version": VERSION,
        "config": _jsonable(trainer.config),
        "classes": [int(c) for c in trainer.classes],
        "step": trainer.step,
        "sampler": trainer.sampler.rng.bit_generator.state,
        "trace": trainer.trace,
        "names": names,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = MAGIC + struct.pack("<II", VERSION, len(blob)) + blob + b"".join(records)
    Path(path).write_bytes(payload)


def read_checkpoint(path):
    """Parse a checkpoint into (header dict, {record name: array})."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    if len(buf) < 12:
        raise FormatError("truncated checkpoint header", len(buf))
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
    try:
        header = json.loads(buf[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}", 12) from exc
    offset = 12 + hlen
    arrays = {}
    for name in header["names"]:
        arrays[name], offset = decode_tensor(buf, offset)
    return header, arrays


def config_from_header(header) -> TrainConfig:
    raw = dict(header["config"])
    for k, v in raw.items():
        if isinstance(v, list):
            raw[k] = tuple(v)
    return TrainConfig(**raw)


def checkpoint_load(path, trainer: Trainer) -> Trainer:
    """Restore model, optimiser, sampler and step into ``trainer`` in place."""
    header, arrays = read_checkpoint(path)
    _check_shapes(header["config"], trainer.config)
    if header["classes"] != [int(c) for c in trainer.classes]:
        raise CheckpointError(f"checkpoint has {len(header['classes'])} classes, trainer has {trainer.classes.size}")
    state = {name[len("model:"):]: arr for name, arr in arrays.items() if name.startswith("model:")}
    try:
        trainer.model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(str(exc)) from exc
    for name in trainer.optimizer.buffers:
        key = "momentum:" + name
        if key not in arrays:
            raise CheckpointError(f"checkpoint lacks optimiser state for {name}")
        trainer.optimizer.buffers[name] = arrays[key].copy()
    trainer.sampler.rng.bit_generator.state = header["sampler"]
    trainer.step = int(header["step"])
    trainer.trace = list(header["trace"])
    return trainer


def _check_shapes(saved: Dict, config: TrainConfig) -> None:
    current = _jsonable(config)
    for field_name in SHAPE_FIELDS:
        if saved.get(field_name) != current[field_name]:
            raise CheckpointError(
                f"checkpoint {field_name}={saved.get(field_name)} does not match config {field_name}={current[field_name]}"
            )


def load_model(path, config: TrainConfig = None):
    """Rebuild the network stored in a checkpoint, in eval mode.

    When ``config`` is given its geometry must match the checkpoint's.
    """
    from .model import RelationalGraphNet

    header, arrays = read_checkpoint(path)
    if config is not None:
        _check_shapes(header["config"], config)
    model = RelationalGraphNet(config_from_header(header), num_classes=len(header["classes"]))
    state = {name[len("model:"):]: arr for name, arr in arrays.items() if name.startswith("model:")}
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(str(exc)) from exc
    model.classes = np.asarray(header["classes"])
    return model.eval()
