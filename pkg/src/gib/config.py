"""Flat ``key = value`` experiment configuration.

One setting per line, ``#`` starts a comment, sections are dotted key
prefixes (``gate.tau = 0.5``). Every key has a typed default; unknown keys are
rejected so that typos never pass silently. Lists are comma separated and may
be empty.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

EXPERIMENTS = ("colored", "sem", "adversarial", "ood", "sweep", "verify-bounds")
METHODS = ("gib", "erm")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = f"{path or '<config>'}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


# key -> (type, default). Types: int, float, str, bool, "ints", "floats", "strs".
SCHEMA: dict[str, tuple[object, object]] = {
    "experiment": (str, "colored"),
    "method": (str, "gib"),
    "seeds": ("ints", [0]),
    "n_envs": (int, 2),
    "output": (str, "runs"),
    "data.source": (str, "synthetic"),
    "data.train_images": (str, ""),
    "data.train_labels": (str, ""),
    "data.test_images": (str, ""),
    "data.test_labels": (str, ""),
    "data.samples_per_env": (int, 2000),
    "data.test_samples": (int, 2000),
    "data.label_map": (str, "identity"),
    "data.label_noise": (float, 0.25),
    "data.test_color_flip": (float, 0.9),
    "model.hidden": ("ints", [200, 200, 200]),
    "model.dropout": (float, 0.2),
    "gate.init": (float, 1.0),
    "gate.tau": (float, 0.5),
    "gate.period": (int, 100),
    "gate.floor": (int, -1),
    "gate.rule": (str, "and"),
    "gate.kind": (str, "sigmoid"),
    "gate.projection_kind": (str, "sigmoid"),
    "train.lambda": (float, 1e-3),
    "train.epochs": (int, 20),
    "train.projection_epochs": (int, -1),
    "train.batch_size": (int, 100),
    "train.lr": (float, 1e-3),
    "train.lr_decay": (float, 0.97),
    "train.lr_period": (int, 2),
    "train.gate_lr_scale": (float, 1.0),
    "train.estimator": (str, "joint"),
    "kernel.alpha": (float, 1.01),
    "kernel.bandwidth": (str, "median"),
    "kernel.sigma": (float, 1.0),
    "kernel.scale": (float, 1.0),
    "sem.env_scales": ("floats", [0.2, 2.0]),
    "sem.hidden_scale": (float, 0.1),
    "sem.scale_x2_noise": (bool, False),
    "sem.d_causal": (int, 10),
    "sem.d_noncausal": (int, 10),
    "attack.epsilons": ("floats", [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3]),
    "attack.gamma": (float, 0.1),
    "attack.steps": (int, 5),
    "ood.in_kinds": ("strs", ["ring", "bar"]),
    "ood.out_kinds": ("strs", ["cross", "box"]),
    "sweep.lambdas": ("floats", [0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1]),
    "sweep.dim": (int, 10),
    "sweep.workers": (int, 1),
    "bounds.trials": (int, 1000),
    "bounds.max_x": (int, 8),
    "bounds.max_z": (int, 8),
}

# Experiment-specific defaults layered over SCHEMA before the file is applied.
PRESETS: dict[str, dict[str, object]] = {
    "colored": {"seeds": [0, 1, 2]},
    "sem": {
        "seeds": [0, 1, 2, 3, 4], "data.samples_per_env": 1000, "data.test_samples": 1000,
        "model.hidden": [], "model.dropout": 0.0, "gate.period": 10, "gate.floor": 2,
        "train.lambda": 1e-2, "train.epochs": 50, "train.batch_size": 50, "train.lr": 1e-2,
    },
    "adversarial": {"n_envs": 1, "train.epochs": 10},
    "ood": {"n_envs": 1, "train.epochs": 10},
    "sweep": {
        "seeds": [0, 1, 2], "n_envs": 1, "data.samples_per_env": 1000, "data.test_samples": 1000,
        "model.hidden": [32, 32], "model.dropout": 0.0, "gate.period": 20, "gate.floor": 2,
        "train.batch_size": 50, "train.gate_lr_scale": 30.0,
    },
    "verify-bounds": {},
}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(text: str, item):
    return [item(t.strip()) for t in text.split(",")] if text.strip() else []


def parse_value(kind, text: str):
    if kind is bool:
        return _parse_bool(text)
    if kind == "ints":
        return _parse_list(text, int)
    if kind == "floats":
        return _parse_list(text, float)
    if kind == "strs":
        return _parse_list(text, str)
    return kind(text)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def parse_text(text: str, path: str | None = None) -> dict[str, object]:
    """Raw typed assignments from config text; no defaults applied."""
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", lineno, path)
        try:
            out[key] = parse_value(SCHEMA[key][0], value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, path) from None
    return out


@dataclass
class ExperimentConfig:
    values: dict[str, object]

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def experiment(self) -> str:
        return self.values["experiment"]

    def snapshot(self) -> str:
        """Every effective setting, defaults included, in loadable form."""
        return "".join(f"{k} = {format_value(self.values[k])}\n" for k in SCHEMA)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return ExperimentConfig({**self.values, "seeds": [int(seed)]})


def resolve(assigned: dict[str, object], overrides: dict[str, object] | None = None) -> ExperimentConfig:
    """Apply schema defaults, then the experiment preset, then ``assigned``, then ``overrides``."""
    merged = {**assigned, **(overrides or {})}
    experiment = merged.get("experiment", SCHEMA["experiment"][1])
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
    values = {k: default for k, (_, default) in SCHEMA.items()}
    values.update(PRESETS[experiment])
    values.update(merged)
    validate(values)
    return ExperimentConfig(values)


def validate(v: dict[str, object]) -> None:
    if v["method"] not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {v['method']!r}")
    if not v["seeds"]:
        raise ConfigError("seeds must be nonempty")
    if v["n_envs"] < 1:
        raise ConfigError("n_envs must be >= 1")
    if v["experiment"] == "colored" and v["n_envs"] < 2:
        raise ConfigError("the colored experiment needs n_envs >= 2")
    if v["data.source"] not in ("synthetic", "idx"):
        raise ConfigError(f"data.source must be 'synthetic' or 'idx', got {v['data.source']!r}")
    if v["data.source"] == "idx":
        for key in ("data.train_images", "data.train_labels", "data.test_images", "data.test_labels"):
            path = v[key]
            if not path:
                raise ConfigError(f"{key} is required when data.source = idx")
            if not os.path.exists(path):
                raise ConfigError(f"data file not found: {path}")
    if v["experiment"] == "sem" and len(v["sem.env_scales"]) != v["n_envs"]:
        raise ConfigError(f"sem.env_scales has {len(v['sem.env_scales'])} entries but n_envs = {v['n_envs']}")
    if v["experiment"] == "sweep" and not v["sweep.lambdas"]:
        raise ConfigError("sweep.lambdas must be nonempty")


def load(path: str | os.PathLike, overrides: dict[str, object] | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return resolve(parse_text(text, os.fspath(path)), overrides)
