"""Checkpoint and adapter container files.

One file = a JSON manifest line (format version, configs, seed, array
directory) + NUL separator + the raw little-endian float64 bytes of every
named array in declaration order. Raw bytes make the round-trip bit-exact.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .adapters import (
    LANGUAGE,
    TASK,
    AdapterConfig,
    AdapterStack,
    AdapterWeights,
)
from .autodiff import Tensor
from .encoder import Encoder, EncoderConfig
from .errors import MissingArtifactError, SwapError

FORMAT_VERSION = 1
_SEP = b"\x00"


def _write_container(path, manifest: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    manifest = dict(manifest)
    manifest["format_version"] = FORMAT_VERSION
    manifest["arrays"] = [
        {"name": name, "shape": list(arr.shape)} for name, arr in arrays
    ]
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8") + _SEP
    with open(path, "wb") as fh:
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"no such checkpoint or adapter file: {path}")
    raw = path.read_bytes()
    head, _, body = raw.partition(_SEP)
    manifest = json.loads(head.decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise MissingArtifactError(
            f"{path}: unsupported container format {manifest.get('format_version')}"
        )
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += count * 8
    return manifest, arrays


def _adapter_config_dict(cfg: AdapterConfig) -> dict:
    return dataclasses.asdict(cfg)


def save_checkpoint(path, encoder: Encoder, stack: AdapterStack | None = None,
                    extra: dict | None = None) -> None:
    """Serialize the encoder (heads included) plus any attached adapter stack."""
    manifest = {
        "kind": "checkpoint",
        "seed": encoder.seed,
        "encoder_config": dataclasses.asdict(encoder.config),
        "heads": dict(encoder.head_classes),
        "adapters": {
            "language": _adapter_config_dict(stack.lang[0].config)
            if stack and stack.lang else None,
            "task": _adapter_config_dict(stack.task[0].config)
            if stack and stack.task else None,
        },
    }
    if extra:
        manifest["extra"] = extra
    arrays = [(name, tensor.values) for name, tensor in encoder.params.items()]
    _write_container(path, manifest, arrays)


def load_checkpoint(path) -> tuple[Encoder, AdapterStack | None, dict]:
    """Rebuild an encoder (+stack) from a container file, values bit-exact."""
    manifest, arrays = _read_container(path)
    if manifest.get("kind") != "checkpoint":
        raise MissingArtifactError(f"{path} is not a checkpoint container")
    config = EncoderConfig(**manifest["encoder_config"])
    encoder = Encoder(config, seed=manifest["seed"])
    for head, n in manifest["heads"].items():
        if head == "cls":
            encoder.ensure_cls_head(n)
        else:
            encoder.ensure_tag_head(n)
    stack = None
    adapters = manifest["adapters"]
    if adapters["language"] or adapters["task"]:
        stack = AdapterStack(config.num_layers)
        for kind, key in ((LANGUAGE, "language"), (TASK, "task")):
            if not adapters[key]:
                continue
            acfg = AdapterConfig(**adapters[key])
            short = "lang" if kind == LANGUAGE else "task"
            weights = []
            for i in range(config.num_layers):
                weights.append(AdapterWeights(
                    acfg,
                    Tensor(np.zeros((config.hidden, acfg.dim))),
                    Tensor(np.zeros((acfg.dim, config.hidden))),
                ))
            stack.fill(kind, weights)
        stack.register(encoder.params)
    expected = encoder.params.names()
    if expected != [e["name"] for e in manifest["arrays"]]:
        raise MissingArtifactError(f"{path}: array directory does not match the model")
    for name in expected:
        encoder.params[name].values[...] = arrays[name]
    return encoder, stack, manifest


def save_adapter(path, weights: list[AdapterWeights], seed: int = 0,
                 language: str | None = None) -> None:
    """Standalone adapter file: one (w_down, w_up) pair per layer."""
    manifest = {
        "kind": "adapter",
        "seed": seed,
        "language": language,
        "adapter_config": _adapter_config_dict(weights[0].config),
        "num_layers": len(weights),
    }
    arrays = []
    for i, w in enumerate(weights):
        arrays.append((f"{i}.w_down", w.w_down.values))
        arrays.append((f"{i}.w_up", w.w_up.values))
    _write_container(path, manifest, arrays)


def load_adapter(path) -> tuple[AdapterConfig, list[tuple[np.ndarray, np.ndarray]], dict]:
    manifest, arrays = _read_container(path)
    if manifest.get("kind") != "adapter":
        raise MissingArtifactError(f"{path} is not an adapter container")
    config = AdapterConfig(**manifest["adapter_config"])
    pairs = []
    for i in range(manifest["num_layers"]):
        try:
            pairs.append((arrays[f"{i}.w_down"], arrays[f"{i}.w_up"]))
        except KeyError as exc:
            raise SwapError(f"{path}: adapter file missing layer {i} arrays") from exc
    return config, pairs, manifest
