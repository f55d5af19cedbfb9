"""Declarative run configuration.

Flat sectioned key-value files (TOML-style subset):

    [condense]
    ipc = 10
    iterations = 20000

Unknown sections or keys are rejected with the full offending list.
Defaults follow the reference protocol: 20,000 matching iterations
(10,000 for tinyimagenet), real batch 256, learning rate 1 for
ipc <= 50 and 10 for ipc >= 100, depth-3 ConvNet (depth 4 for
tinyimagenet).
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError

_SCHEMA: dict[str, dict[str, object]] = {
    "data": {
        "dataset": "toy",
        "source": "",
        "toy_seed": 0,
        "toy_per_class": 128,
        "toy_noise": 0.25,
    },
    "condense": {
        "iterations": -1,     # -1 -> dataset default
        "ipc": 1,
        "lr": -1.0,           # -1 -> ipc-dependent default
        "batch_real": 256,
        "momentum": 0.5,
        "arch": "convnet",
        "depth": -1,          # -1 -> dataset default
        "width": 128,
        "activation": "relu",
        "norm": "instance",
        "pooling": "avg",
        "sampler": "random_init",
        "pool_dir": "",
        "bucket_lo": -1.0,
        "bucket_hi": -1.0,
        "net_samples_per_iter": 1,
    },
    "augment": {
        "strategies": [],     # empty -> dataset default family
        "log_aug": False,
    },
    "eval": {
        "epochs": 300,
        "batch_size": 256,
        "lr": 0.01,
        "repeats": 5,
        "nets_per_set": 20,
        "arch": "convnet",
        "norm": "instance",
        "augment": True,
    },
    "continual": {
        "steps": 5,
        "budget": 20,
        "builder": "dm",
    },
    "nas": {
        "space_size": 36,
        "subsample_seed": 0,
        "epochs": 200,
        "reference_epochs": 100,
        "repeats": 5,
        "batch_size": 250,
    },
    "run": {
        "seed": 0,
        "workers": 1,
    },
}

_ITERATION_DEFAULTS = {"tinyimagenet": 10000}
_DEPTH_DEFAULTS = {"tinyimagenet": 4}


def _parse_value(raw: str, path: str, lineno: int):
    raw = raw.strip()
    if raw.startswith("[") and raw.endswith("]"):
        inner = raw[1:-1].strip()
        if not inner:
            return []
        return [_parse_value(item, path, lineno) for item in inner.split(",")]
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    if (raw.startswith('"') and raw.endswith('"')) or \
       (raw.startswith("'") and raw.endswith("'")):
        return raw[1:-1]
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def _read_sections(path: str | Path) -> dict[str, dict]:
    text = Path(path).read_text()
    sections: dict[str, dict] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if current is None:
            raise ConfigError(f"{path}:{lineno}: key outside any [section]")
        key, raw = line.split("=", 1)
        sections[current][key.strip()] = _parse_value(raw, str(path), lineno)
    return sections


def _coerce(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected boolean, got {value!r}")
        return value
    if isinstance(default, int) and isinstance(value, bool):
        raise ConfigError(f"{where}: expected integer, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, int):
            return value
        raise ConfigError(f"{where}: expected integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{where}: expected number, got {value!r}")
    if isinstance(default, list):
        if isinstance(value, list):
            return value
        raise ConfigError(f"{where}: expected list, got {value!r}")
    return str(value)


def default_config() -> dict[str, dict]:
    return {section: dict(values) for section, values in _SCHEMA.items()}


def parse_config(path: str | Path | None) -> dict[str, dict]:
    """Materialize the full configuration; reject unknown keys."""
    config = default_config()
    if path is not None:
        sections = _read_sections(path)
        offending = []
        for section, values in sections.items():
            if section not in _SCHEMA:
                offending.append(f"[{section}]")
                continue
            for key, value in values.items():
                if key not in _SCHEMA[section]:
                    offending.append(f"{section}.{key}")
                    continue
                config[section][key] = _coerce(
                    value, _SCHEMA[section][key], f"{section}.{key}")
        if offending:
            raise ConfigError("unknown config keys: " + ", ".join(offending))
    _validate(config)
    _apply_defaults(config)
    return config


def _validate(config: dict[str, dict]) -> None:
    c = config["condense"]
    if c["lr"] != -1.0 and c["lr"] <= 0:
        raise ConfigError("condense.lr must be > 0")
    if c["iterations"] != -1 and c["iterations"] < 0:
        raise ConfigError("condense.iterations must be >= 0")
    if c["ipc"] < 1:
        raise ConfigError("condense.ipc must be >= 1")
    if c["batch_real"] < 1:
        raise ConfigError("condense.batch_real must be >= 1")
    if config["eval"]["repeats"] < 1 or config["eval"]["nets_per_set"] < 1:
        raise ConfigError("eval.repeats and eval.nets_per_set must be >= 1")
    if config["run"]["workers"] < 1:
        raise ConfigError("run.workers must be >= 1")


def _apply_defaults(config: dict[str, dict]) -> None:
    dataset = config["data"]["dataset"]
    c = config["condense"]
    if c["iterations"] == -1:
        c["iterations"] = _ITERATION_DEFAULTS.get(dataset, 20000)
    if c["depth"] == -1:
        c["depth"] = _DEPTH_DEFAULTS.get(dataset, 3)
    if c["lr"] == -1.0:
        c["lr"] = 10.0 if c["ipc"] >= 100 else 1.0
