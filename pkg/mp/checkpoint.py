"""Checkpoint files.

A checkpoint is a safetensors file: one float64 tensor per parameter name plus
a single metadata entry ``magic_pyramid`` holding a JSON header::

    {"magic": "magic-pyramid-checkpoint", "format_version": 1,
     "config": {...ModelConfig...}, "stage": "regular", "extra": {...}}

Only one metadata key is written so the header serialises identically on
every run.
"""
import json
import logging
from pathlib import Path

from safetensors import SafetensorError, safe_open
from safetensors.torch import load_file, save_file

from .encoder import Encoder, ModelConfig, build_parameters
from .exceptions import ConfigError, LoadError

logger = logging.getLogger(__name__)

MAGIC = 'magic-pyramid-checkpoint'
FORMAT_VERSION = 1
HEADER_KEY = 'magic_pyramid'


def save_checkpoint(model: Encoder, path, stage=None, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        'magic': MAGIC,
        'format_version': FORMAT_VERSION,
        'config': model.config.to_dict(),
        'stage': stage,
        'extra': extra or {},
    }
    tensors = {name: t.detach().contiguous() for name, t in model.params.items()}
    save_file(tensors, str(path), metadata={HEADER_KEY: json.dumps(header, sort_keys=True)})
    logger.info("wrote checkpoint %s (stage=%s)", path, stage)
    return path


def read_header(path):
    try:
        with safe_open(str(path), framework='pt') as f:
            metadata = f.metadata() or {}
    except (OSError, SafetensorError) as exc:
        raise LoadError(f"{path}: not a readable checkpoint ({exc})") from exc
    try:
        header = json.loads(metadata[HEADER_KEY])
    except (KeyError, ValueError) as exc:
        raise LoadError(f"{path}: missing checkpoint header") from exc
    if header.get('magic') != MAGIC:
        raise LoadError(f"{path}: bad magic {header.get('magic')!r}")
    if header.get('format_version') != FORMAT_VERSION:
        raise LoadError(f"{path}: unsupported format version {header.get('format_version')}")
    return header


def load_checkpoint(path):
    """Return ``(model, header)``; every tensor of the model must be present."""
    header = read_header(path)
    try:
        config = ModelConfig.from_dict(header['config'])
    except (ConfigError, TypeError) as exc:
        raise LoadError(f"{path}: bad model config ({exc})") from exc
    params = build_parameters(config)
    params.load_state(load_file(str(path)))
    return Encoder(config, params), header
