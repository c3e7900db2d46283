"""
Defaults, machine-local settings from env.json, and the experiment config file format.

An experiment config is a flat key = value text file, one entry per line, lists separated by commas:

    # reference problem at two noise levels
    problems = gaussian_blur:sigma=2.0, separable_kron
    methods = df, lcurve, ncp, discrepancy, wgcv
    orderings = hyperbolic, elliptic
    alphas = 1e-2, 1e-4
    seeds = 20
    k_max = 150
    image_size = 64x64
    epsilon = 1e-2

Problem entries use the same name:key=value spec as the command line. A comma followed by key=value
continues the previous spec; anything else starts a new problem.
"""
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from spectral_filter import DEFAULT_EPSILON, default_h
from stopping import DEFAULT_DELTA, DEFAULT_P, DEFAULT_TAU

DEFAULT_K_MAX = 150
DEFAULT_ALPHAS = (1e-2, 1e-4, 1e-6)
DEFAULT_SEEDS = 20
DEFAULT_IMAGE_SIZE = (64, 64)
DEFAULT_MASTER_SEED = 0

METHODS = ("df", "lcurve", "ncp", "discrepancy", "wgcv", "gcv")
ORDERINGS = ("hyperbolic", "elliptic")

ENV_FILE = "env.json"
ENV_KEYS = ("log_level", "workers")


class ConfigError(ValueError):
    """
    Raised for a malformed experiment config. `keys` lists every offending key.
    """

    def __init__(self, message: str, keys=()):
        super().__init__(message)
        self.keys = list(keys)


def load_env(path=ENV_FILE) -> dict:
    """
    Read optional machine-local settings. A missing file yields an empty dict.
    """
    try:
        with open(path) as f:
            env = json.load(f)
    except FileNotFoundError:
        return {}
    except json.JSONDecodeError:
        raise ValueError("Invalid JSON format.")

    if not isinstance(env, dict):
        raise ValueError(f"{path} must contain a JSON object.")
    unknown = sorted(set(env) - set(ENV_KEYS))
    if unknown:
        logging.warning(f"config: ignoring unknown keys in {path}: {', '.join(unknown)}")
    return {key: env[key] for key in ENV_KEYS if key in env}


def parse_size(text: str) -> tuple[int, int]:
    """
    '64x48' -> (64, 48); a single integer means a square image.
    """
    match = re.fullmatch(r"\s*(\d+)\s*(?:[xX]\s*(\d+))?\s*", str(text))
    if match is None:
        raise ValueError(f"Invalid size '{text}'. Use MxN, e.g. 64x64.")
    M = int(match.group(1))
    N = int(match.group(2)) if match.group(2) else M
    if M < 1 or N < 1:
        raise ValueError(f"Invalid size '{text}'. Dimensions must be positive.")
    return M, N


@dataclass
class ExperimentConfig:
    problems: list = field(default_factory=lambda: ["gaussian_blur"])
    methods: list = field(default_factory=lambda: list(METHODS[:5]))
    orderings: list = field(default_factory=lambda: list(ORDERINGS))
    alphas: list = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    seeds: int = DEFAULT_SEEDS
    master_seed: int = DEFAULT_MASTER_SEED
    k_max: int = DEFAULT_K_MAX
    image_size: tuple = DEFAULT_IMAGE_SIZE
    workers: int = 1
    timing: bool = False
    delta: float = DEFAULT_DELTA
    p: int = DEFAULT_P
    epsilon: float = DEFAULT_EPSILON
    h: Optional[int] = None
    tau: float = DEFAULT_TAU

    def look_ahead(self, m: int) -> int:
        """
        Picard look-ahead step for data of length m: the configured h, or ceil(m / 100).
        """
        return default_h(m) if self.h is None else min(self.h, max(m - 1, 1))


def _split_specs(value: str) -> list[str]:
    """
    Split a comma-separated list of name:key=value specs without breaking the specs apart.
    """
    items: list[str] = []
    for part in (p.strip() for p in value.split(",")):
        if not part:
            continue
        if items and "=" in part.split(":", 1)[0] and ":" not in part:
            items[-1] = f"{items[-1]},{part}"
        else:
            items.append(part)
    return items


def _split_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"Invalid boolean '{text}'.")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError(f"Expected a positive integer, got {value}.")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise ValueError(f"Expected a positive number, got {value}.")
    return value


def _alphas(text: str) -> list[float]:
    values = [float(item) for item in _split_list(text)]
    if not values or any(a < 0 for a in values):
        raise ValueError("alphas must be a non-empty list of nonnegative numbers.")
    return values


def _choices(allowed):
    def parse(text: str) -> list[str]:
        items = _split_list(text)
        bad = [item for item in items if item not in allowed]
        if not items or bad:
            raise ValueError(f"Expected values from {allowed}, got {items}.")
        return items
    return parse


_PARSERS = {
    "problems": _split_specs,
    "methods": _choices(METHODS),
    "orderings": _choices(ORDERINGS),
    "alphas": _alphas,
    "seeds": _positive_int,
    "master_seed": int,
    "k_max": _positive_int,
    "image_size": parse_size,
    "workers": _positive_int,
    "timing": _parse_bool,
    "delta": _positive_float,
    "p": _positive_int,
    "epsilon": _positive_float,
    "h": _positive_int,
    "tau": _positive_float,
}


def parse_experiment_config(text: str) -> ExperimentConfig:
    """
    Parse the key = value format. Every error is collected before raising so the error lists all
    offending keys at once.
    """
    values = {}
    bad: list[str] = []
    messages: list[str] = []

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            bad.append(f"line {number}")
            messages.append(f"line {number}: expected key = value, got '{line}'")
            continue

        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            bad.append(key)
            messages.append(f"unknown key '{key}'")
            continue
        if key in values:
            bad.append(key)
            messages.append(f"duplicate key '{key}'")
            continue
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as e:
            bad.append(key)
            messages.append(f"{key}: {e}")

    if bad:
        raise ConfigError("Malformed experiment config: " + "; ".join(messages), bad)
    if not values.get("problems", True):
        raise ConfigError("Malformed experiment config: problems is empty", ["problems"])
    return ExperimentConfig(**values)


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Experiment config not found: {path}")
    config = parse_experiment_config(path.read_text())
    env = load_env()
    if "workers" in env and config.workers == 1:
        config.workers = env_workers(env)
    return config


def resolve_log_level(verbosity: int, env: dict) -> int:
    """
    -v gives INFO, -vv DEBUG; without flags env.json's log_level or WARNING.
    """
    if verbosity >= 2:
        return logging.DEBUG
    if verbosity == 1:
        return logging.INFO
    level = env.get("log_level", "WARNING")
    resolved = logging.getLevelName(str(level).upper())
    return resolved if isinstance(resolved, int) else logging.WARNING


def env_workers(env: dict, default: int = 1) -> int:
    try:
        return max(int(env.get("workers", default)), 1)
    except (TypeError, ValueError):
        return default
