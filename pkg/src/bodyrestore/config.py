"""Run configuration: JSON file + CLI flag overrides, validated strictly.

Every command resolves its full parameter set before doing any work and
writes the resolved snapshot next to its outputs; re-running a command
from its snapshot reproduces the outputs byte for byte. Unknown keys
are errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class Field:
    name: str
    type: type
    default: object = None
    required: bool = False
    help: str = ""


SCHEMAS: dict[str, tuple[Field, ...]] = {
    "gen": (
        Field("out", str, required=True, help="output dataset directory"),
        Field("n", int, 2200, help="total sample count"),
        Field("seed", int, 0),
        Field("test_fraction", float, 1.0 / 11.0,
              help="floor(n * fraction) samples form the test split"),
    ),
    "degrade": (
        Field("manifest", str, required=True),
        Field("out", str, None, help="output dir (default: manifest dir)"),
        Field("seed", int, 0),
        Field("blur_sigma", float, 1.0),
        Field("down_factor", int, 1),
        Field("noise_sigma", float, 0.05),
        Field("jpeg_quality", int, 40, help="1..100, or 0 to disable"),
        Field("order", str, "blur-down-noise-jpeg"),
    ),
    "train-regressor": (
        Field("manifest", str, required=True, help="degraded manifest"),
        Field("out", str, required=True),
        Field("iterations", int, 2000),
        Field("batch_size", int, 16),
        Field("learning_rate", float, 1e-3),
        Field("seed", int, 0),
        Field("checkpoint_interval", int, 500),
        Field("codec_mode", str, "identity"),
    ),
    "train-diffusion": (
        Field("manifest", str, required=True, help="degraded manifest"),
        Field("regressor", str, required=True, help="regressor checkpoint"),
        Field("out", str, required=True),
        Field("iterations", int, 2000),
        Field("batch_size", int, 16),
        Field("learning_rate", float, 1e-3),
        Field("seed", int, 0),
        Field("checkpoint_interval", int, 500),
        Field("codec_mode", str, "identity"),
        Field("timesteps", int, 1000),
        Field("beta_start", float, 1e-4),
        Field("beta_end", float, 0.02),
        Field("inference_steps", int, 50),
    ),
    "restore": (
        Field("manifest", str, required=True, help="degraded manifest"),
        Field("split", str, "test"),
        Field("regressor", str, required=True),
        Field("diffusion", str, required=True),
        Field("out", str, required=True),
        Field("scale", float, 0.0, help="guidance gradient scale s"),
        Field("gradient_mode", str, "full-chain"),
        Field("variant", str, "normalized-L2"),
        Field("seed", int, 0),
        Field("batch_size", int, 25),
        Field("timesteps", int, 1000),
        Field("beta_start", float, 1e-4),
        Field("beta_end", float, 0.02),
        Field("inference_steps", int, 50),
        Field("limit", int, 0, help="restore only the first N items (0 = all)"),
    ),
    "evaluate": (
        Field("manifest", str, required=True),
        Field("split", str, "test"),
        Field("candidate_dir", str, None, help="dir holding candidate images"),
        Field("candidate_suffix", str, "_restored.png"),
        Field("candidate_field", str, None,
              help="evaluate a manifest field (e.g. lq) instead of a dir"),
        Field("out", str, required=True, help="output CSV path"),
    ),
    "curate": (
        Field("in_dir", str, required=True),
        Field("out", str, required=True),
        Field("min_height", int, 128),
        Field("min_width", int, 64),
        Field("aspect_lo", float, 1.5),
        Field("aspect_hi", float, 2.5),
        Field("coverage_tau", float, 0.05),
        Field("target_height", int, 128),
        Field("target_width", int, 64),
        Field("marks", str, None, help="review verdicts JSONL to fold in"),
    ),
    "sweep-s": (
        Field("manifest", str, required=True),
        Field("split", str, "test"),
        Field("regressor", str, required=True),
        Field("diffusion", str, required=True),
        Field("out", str, required=True, help="output JSON path"),
        Field("n", int, 16),
        Field("seed", int, 0),
        Field("values", str, "0.1,1,10,100"),
        Field("variant", str, "normalized-L2"),
        Field("timesteps", int, 1000),
        Field("beta_start", float, 1e-4),
        Field("beta_end", float, 0.02),
        Field("inference_steps", int, 50),
    ),
}


def resolve(command: str, file_config: dict | None, overrides: dict) -> dict:
    """Merge config file + overrides against the command schema."""
    schema = {f.name: f for f in SCHEMAS[command]}
    merged: dict = {}
    if file_config:
        fc = dict(file_config)
        cmd = fc.pop("command", None)
        if cmd is not None and cmd != command:
            raise ConfigError(f"config file is for command {cmd!r}, not {command!r}")
        for key, value in fc.items():
            if key not in schema:
                raise ConfigError(f"unknown config key {key!r} for {command}")
            merged[key] = value
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in schema:
            raise ConfigError(f"unknown option {key!r} for {command}")
        merged[key] = value
    resolved = {}
    for name, f in schema.items():
        if name in merged:
            value = merged[name]
            try:
                if f.type is int and not isinstance(value, bool):
                    value = int(value)
                elif f.type is float:
                    value = float(value)
                elif f.type is str and value is not None:
                    value = str(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {name!r}: {exc}") from exc
            resolved[name] = value
        elif f.required:
            raise ConfigError(f"missing required config key {name!r} for {command}")
        else:
            resolved[name] = f.default
    return resolved


def load_config_file(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return data


def write_snapshot(out_dir: str | Path, command: str, resolved: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{command.replace('-', '_')}_config.json"
    payload = {"command": command}
    payload.update(sorted(resolved.items()))
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
