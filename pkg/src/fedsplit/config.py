"""Experiment configuration: TOML parsing, schema validation, and the
mapping from method names to protocol round configurations.

Every key has a documented default and range; unknown keys are hard errors
that name the offending key path.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .collab import DefenseConfig, RoundConfig
from .errors import ConfigError

METHOD_IDS = (
    "centralized",
    "fedavg",
    "split",
    "hybrid",
    "hybrid_personalized",
    "hybrid_defended",
)

METHOD_LABELS = {
    "centralized": "Centralized",
    "fedavg": "FedAvg",
    "split": "Split",
    "hybrid": "Hybrid",
    "hybrid_personalized": "Hybrid+Pers.",
    "hybrid_defended": "Hybrid+Def.",
}

# Methods whose training exchanges cut-layer activations; only these are
# audited for membership leakage.
SPLIT_BASED_METHODS = frozenset(
    {"split", "hybrid", "hybrid_personalized", "hybrid_defended"}
)

_BASE_MODE = {
    "centralized": "centralized",
    "fedavg": "fedavg",
    "split": "split",
    "hybrid": "hybrid",
    "hybrid_personalized": "hybrid",
    "hybrid_defended": "hybrid",
}


@dataclass(frozen=True)
class Key:
    """One schema entry: default value, type tag, documentation, range check."""

    default: Any
    kind: str
    doc: str
    check: Any = None  # callable value -> error string or None


def _positive(name):
    return lambda v: None if v > 0 else f"{name} must be positive"


def _non_negative(name):
    return lambda v: None if v >= 0 else f"{name} must be non-negative"


def _fraction_open(name):
    return lambda v: None if 0.0 < v < 1.0 else f"{name} must lie in (0, 1)"


def _choice(name, options):
    return lambda v: None if v in options else f"{name} must be one of {sorted(options)}"


_TRAINING_KEYS = {
    "rounds": Key(5, "int", "communication rounds R (>= 1)", _positive("rounds")),
    "local_epochs": Key(1, "int", "local passes per round E (>= 1)", _positive("local_epochs")),
    "batch_size": Key(256, "int", "mini-batch size (>= 1)", _positive("batch_size")),
    "lr_client": Key(1e-3, "float", "client-side Adam learning rate (> 0)", _positive("lr_client")),
    "lr_server": Key(1e-3, "float", "server-side Adam learning rate (> 0)", _positive("lr_server")),
    "participation": Key(
        1.0,
        "float",
        "fraction of clients active per round, (0, 1]",
        lambda v: None if 0.0 < v <= 1.0 else "participation must lie in (0, 1]",
    ),
}

SCHEMA: dict[str, Any] = {
    "seeds": Key([0, 1, 2], "list_int", "run seeds; metrics aggregate across them"),
    "dataset": {
        "name": Key("synthetic", "str", "dataset label used in report rows"),
        "source": Key(
            "synthetic", "str", "'synthetic' or 'csv'", _choice("dataset.source", ("synthetic", "csv"))
        ),
        "synthetic": {
            "seed": Key(7, "int", "generator seed; the dataset is fixed across run seeds"),
            "n_per_client": Key(1500, "int", "rows per client (>= 1)", _positive("n_per_client")),
            "clients": Key(3, "int", "number of clients K (>= 1)", _positive("clients")),
            "features": Key(10, "int", "feature count d (>= 1)", _positive("features")),
            "client_shift_scale": Key(
                0.5, "float", "per-client feature mean shift; 0 = IID", _non_negative("client_shift_scale")
            ),
            "effect_scale": Key(1.5, "float", "treatment-effect logit scale; 0 = null effect"),
            "propensity_scale": Key(
                0.5, "float", "confounding strength of the treatment logit", _non_negative("propensity_scale")
            ),
            "baseline_scale": Key(
                1.0, "float", "baseline outcome logit scale", _non_negative("baseline_scale")
            ),
        },
        "csv": {
            "path": Key("", "str", "input file; required when source = 'csv'"),
            "treatment": Key("t", "str", "treatment column name"),
            "outcome": Key("y", "str", "outcome column name"),
            "client": Key("client_id", "str", "client label column name"),
            "features": Key([], "list_str", "feature columns; empty = all remaining"),
        },
    },
    "split": {
        "train": Key(0.7, "float", "train fraction (0, 1)", _fraction_open("split.train")),
        "valid": Key(0.15, "float", "validation fraction (0, 1)", _fraction_open("split.valid")),
        "test": Key(0.15, "float", "test fraction (0, 1)", _fraction_open("split.test")),
    },
    "training": {
        "methods": Key(
            ["centralized", "fedavg", "split", "hybrid"],
            "list_str",
            f"methods to run; subset of {list(METHOD_IDS)}",
        ),
        **_TRAINING_KEYS,
    },
    "override": {
        method: {
            key: Key(None, entry.kind, f"per-method override of training.{key}", entry.check)
            for key, entry in _TRAINING_KEYS.items()
        }
        for method in METHOD_IDS
    },
    "defense": {
        "clip_norm": Key(
            1.0, "float", "activation L2 clip (inf disables)", _positive("defense.clip_norm")
        ),
        "noise_sigma": Key(
            0.05, "float", "Gaussian noise scale (0 disables)", _non_negative("defense.noise_sigma")
        ),
    },
    "audit": {
        "enabled": Key(True, "bool", "run membership audits for split-based methods"),
        "m": Key(0, "int", "per-class audit sample size; 0 = min(500, pool)", _non_negative("audit.m")),
        "train_fraction": Key(
            0.5, "float", "attacker train fraction (0, 1)", _fraction_open("audit.train_fraction")
        ),
        "per_round": Key(False, "bool", "also audit after every round"),
        "model": Key("", "str", "saved model path for the `audit` verb"),
        "target_client": Key("", "str", "client to audit; empty = all clients"),
    },
    "trim": {
        "mode": Key("alpha", "str", "'alpha' or 'quantile'", _choice("trim.mode", ("alpha", "quantile"))),
        "alpha": Key(
            0.05,
            "float",
            "keep rows with alpha <= e <= 1-alpha; [0, 0.5)",
            lambda v: None if 0.0 <= v < 0.5 else "trim.alpha must lie in [0, 0.5)",
        ),
        "fraction": Key(
            0.10,
            "float",
            "total fraction trimmed in quantile mode; [0, 1)",
            lambda v: None if 0.0 <= v < 1.0 else "trim.fraction must lie in [0, 1)",
        ),
    },
    "eval": {
        "grid_points": Key(100, "int", "targeting-grid resolution (>= 1)", _positive("eval.grid_points")),
        "random_baseline_reps": Key(
            200, "int", "permutations for the random-ranking baseline (>= 1)", _positive("random_baseline_reps")
        ),
    },
    "sweep": {
        "method": Key(
            "hybrid",
            "str",
            "split-based method swept over the defense grid",
            _choice("sweep.method", tuple(sorted(SPLIT_BASED_METHODS))),
        ),
        "sigmas": Key([0.0, 0.05, 0.5], "list_float", "noise grid for the sweep"),
        "clip_norms": Key([1.0], "list_float", "clip grid for the sweep (inf allowed)"),
    },
    "output": {
        "dir": Key("runs/out", "str", "output directory for all artifacts"),
        "figures": Key(True, "bool", "render PNG figures next to the CSV outputs"),
    },
}


def _check_scalar(path: str, value: Any, entry: Key) -> Any:
    kind = entry.kind
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key '{path}' must be an integer, got {value!r}")
    elif kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key '{path}' must be a number, got {value!r}")
        value = float(value)
    elif kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"key '{path}' must be a boolean, got {value!r}")
    elif kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"key '{path}' must be a string, got {value!r}")
    elif kind.startswith("list_"):
        if not isinstance(value, list):
            raise ConfigError(f"key '{path}' must be a list, got {value!r}")
        elem = kind.removeprefix("list_")
        out = []
        for i, item in enumerate(value):
            if elem == "int" and (isinstance(item, bool) or not isinstance(item, int)):
                raise ConfigError(f"key '{path}[{i}]' must be an integer, got {item!r}")
            if elem == "float":
                if isinstance(item, bool) or not isinstance(item, (int, float)):
                    raise ConfigError(f"key '{path}[{i}]' must be a number, got {item!r}")
                item = float(item)
            if elem == "str" and not isinstance(item, str):
                raise ConfigError(f"key '{path}[{i}]' must be a string, got {item!r}")
            out.append(item)
        value = out
    else:  # pragma: no cover - schema author error
        raise ConfigError(f"unknown schema kind '{kind}'")
    if entry.check is not None:
        message = entry.check(value)
        if message:
            raise ConfigError(f"key '{path}': {message}")
    return value


def _resolve(raw: dict, schema: dict, path: str = "") -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{path or '<root>'}' must be a table")
    for key in raw:
        if key not in schema:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown key '{where}'")
    out = {}
    for key, entry in schema.items():
        where = f"{path}.{key}" if path else key
        if isinstance(entry, dict):
            out[key] = _resolve(raw.get(key, {}), entry, where)
        elif key in raw:
            out[key] = _check_scalar(where, raw[key], entry)
        else:
            out[key] = entry.default
    return out


# ---------------------------------------------------------------------------
# typed view


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment configuration (see SCHEMA for key docs)."""

    resolved: dict = field(repr=False)

    @property
    def seeds(self) -> list[int]:
        return list(self.resolved["seeds"])

    @property
    def dataset(self) -> dict:
        return self.resolved["dataset"]

    @property
    def split_fractions(self) -> tuple[float, float, float]:
        s = self.resolved["split"]
        return (s["train"], s["valid"], s["test"])

    @property
    def methods(self) -> list[str]:
        return list(self.resolved["training"]["methods"])

    @property
    def defense(self) -> DefenseConfig:
        d = self.resolved["defense"]
        return DefenseConfig(clip_norm=d["clip_norm"], noise_sigma=d["noise_sigma"])

    @property
    def audit(self) -> dict:
        return self.resolved["audit"]

    @property
    def trim(self) -> dict:
        return self.resolved["trim"]

    @property
    def eval_settings(self) -> dict:
        return self.resolved["eval"]

    @property
    def sweep(self) -> dict:
        return self.resolved["sweep"]

    @property
    def output_dir(self) -> str:
        return self.resolved["output"]["dir"]

    @property
    def render_figures(self) -> bool:
        return self.resolved["output"]["figures"]

    def training_value(self, method: str, key: str):
        override = self.resolved["override"][method].get(key)
        if override is not None:
            return override
        return self.resolved["training"][key]

    def round_config(self, method: str, seed: int) -> RoundConfig:
        if method not in METHOD_IDS:
            raise ConfigError(f"unknown method '{method}'")
        defense = self.defense if method == "hybrid_defended" else None
        return RoundConfig(
            mode=_BASE_MODE[method],
            rounds=self.training_value(method, "rounds"),
            local_epochs=self.training_value(method, "local_epochs"),
            batch_size=self.training_value(method, "batch_size"),
            lr_client=self.training_value(method, "lr_client"),
            lr_server=self.training_value(method, "lr_server"),
            participation=self.training_value(method, "participation"),
            defense=defense,
            personalization=method == "hybrid_personalized",
            seed=seed,
        )


def _validate_cross_keys(resolved: dict) -> None:
    fractions = resolved["split"]
    total = fractions["train"] + fractions["valid"] + fractions["test"]
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"key 'split': fractions must sum to 1, got {total}")
    if not resolved["seeds"]:
        raise ConfigError("key 'seeds': at least one seed is required")
    if len(set(resolved["seeds"])) != len(resolved["seeds"]):
        raise ConfigError("key 'seeds': seeds must be distinct")
    methods = resolved["training"]["methods"]
    if not methods:
        raise ConfigError("key 'training.methods': at least one method is required")
    for method in methods:
        if method not in METHOD_IDS:
            raise ConfigError(
                f"key 'training.methods': unknown method '{method}'; "
                f"choose from {list(METHOD_IDS)}"
            )
    if len(set(methods)) != len(methods):
        raise ConfigError("key 'training.methods': methods must be distinct")
    if resolved["dataset"]["source"] == "csv" and not resolved["dataset"]["csv"]["path"]:
        raise ConfigError("key 'dataset.csv.path': required when dataset.source = 'csv'")
    if resolved["audit"]["m"] and resolved["audit"]["m"] < 10:
        raise ConfigError("key 'audit.m': must be 0 (auto) or >= 10")
    for i, sigma in enumerate(resolved["sweep"]["sigmas"]):
        if sigma < 0:
            raise ConfigError(f"key 'sweep.sigmas[{i}]': must be non-negative")
    for i, c in enumerate(resolved["sweep"]["clip_norms"]):
        if not c > 0:
            raise ConfigError(f"key 'sweep.clip_norms[{i}]': must be positive")
    if math.isinf(resolved["defense"]["clip_norm"]) and resolved["defense"]["noise_sigma"] == 0.0:
        # legal but pointless for hybrid_defended; flag only when selected
        if "hybrid_defended" in methods:
            raise ConfigError(
                "key 'defense': hybrid_defended selected but the defense is a no-op"
            )


def validate_config(raw: dict) -> ExperimentConfig:
    """Validate a parsed TOML dict against the schema."""
    resolved = _resolve(raw, SCHEMA)
    _validate_cross_keys(resolved)
    return ExperimentConfig(resolved=resolved)


def load_config(path) -> ExperimentConfig:
    """Parse and validate a TOML experiment configuration file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    return validate_config(raw)


def config_docs() -> str:
    """Human-readable key table: path, default, and documentation."""
    lines = []

    def walk(schema, path=""):
        for key, entry in schema.items():
            where = f"{path}.{key}" if path else key
            if isinstance(entry, dict):
                walk(entry, where)
            else:
                lines.append(f"{where:40s} default={entry.default!r:24} {entry.doc}")

    walk(SCHEMA)
    return "\n".join(lines)
