"""Checkpointing: model weights, batchnorm buffers, optimizer state, config.

Everything rides in one YTC1 container.  Metadata entries use reserved
double-underscore names: the iteration counter and format version as
1-element float32 tensors, the config snapshot as the UTF-8 bytes of its
canonical text form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig, format_config, parse_config
from .ytc import ContainerError, read_tensors, write_tensors

FORMAT_VERSION = 1

_VERSION_KEY = "__format_version__"
_ITERATION_KEY = "__iteration__"
_CONFIG_KEY = "__config__"
_OPTIM_PREFIX = "optim/"


@dataclass
class Checkpoint:
    model_state: dict
    optim_state: dict
    iteration: int
    config: RunConfig


def save_checkpoint(path, model, optimizer, iteration, cfg: RunConfig):
    entries = {
        _VERSION_KEY: np.array([FORMAT_VERSION], dtype=np.float32),
        _ITERATION_KEY: np.array([iteration], dtype=np.float32),
        _CONFIG_KEY: np.frombuffer(format_config(cfg).encode("utf-8"), dtype=np.uint8),
    }
    for name, value in model.state_dict().items():
        entries[name] = np.asarray(value, dtype=np.float32)
    if optimizer is not None:
        for name, value in optimizer.state_dict().items():
            entries[_OPTIM_PREFIX + name] = np.asarray(value, dtype=np.float32)
    write_tensors(path, entries)


def load_checkpoint(path) -> Checkpoint:
    entries = read_tensors(path)
    for key in (_VERSION_KEY, _ITERATION_KEY, _CONFIG_KEY):
        if key not in entries:
            raise ContainerError(f"{path}: missing checkpoint entry {key!r}")
    version = int(entries.pop(_VERSION_KEY)[0])
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported checkpoint version {version}")
    iteration = int(entries.pop(_ITERATION_KEY)[0])
    cfg = parse_config(entries.pop(_CONFIG_KEY).tobytes().decode("utf-8"))
    optim_state = {}
    model_state = {}
    for name, value in entries.items():
        if name.startswith(_OPTIM_PREFIX):
            optim_state[name[len(_OPTIM_PREFIX):]] = value
        else:
            model_state[name] = value
    return Checkpoint(model_state=model_state, optim_state=optim_state,
                      iteration=iteration, config=cfg)


def restore_model(model, ckpt: Checkpoint):
    """Load weights/buffers into a freshly built model (cast to its dtype)."""
    state = {}
    own = model.state_dict()
    for name, value in ckpt.model_state.items():
        target_dtype = own[name].dtype if name in own else np.float32
        state[name] = value.astype(target_dtype)
    model.load_state_dict(state)


def restore_optimizer(optimizer, ckpt: Checkpoint):
    state = {name: value for name, value in ckpt.optim_state.items()}
    optimizer.load_state_dict(state)
