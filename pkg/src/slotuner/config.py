"""YAML run configuration: sections, defaults and validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .backend import LiveBackendConfig
from .scoring import ScoreWeights
from .simulator import SimConfig

DEFAULT_BUDGET = {"live": 8, "sim": 6}
TOP_LEVEL_KEYS = ("slo", "scoring", "simulator", "live", "controller", "output_dir", "root_seed")
# YAML spelling -> ScoreWeights field
SCORING_KEYS = {
    "w_conc": "w_conc",
    "w_max": "w_max",
    "w_spec": "w_spec",
    "lambda": "lam",
    "sim_w_W": "sim_w_W",
    "sim_w_k": "sim_w_k",
    "sim_violation_multiplier": "sim_violation_multiplier",
}


class ConfigError(ValueError):
    """Bad configuration file: unknown keys, wrong types or violated invariants."""


@dataclass(frozen=True)
class ControllerConfig:
    budget: int | None = None
    delta: float = 0.02
    strict_alg1: bool = False

    def __post_init__(self) -> None:
        if self.budget is not None and self.budget < 1:
            raise ValueError("controller.budget must be >= 1")
        if self.delta < 0:
            raise ValueError("controller.delta must be >= 0")


@dataclass(frozen=True)
class AppConfig:
    slo: float = 1.2
    scoring: ScoreWeights = field(default_factory=ScoreWeights)
    simulator: SimConfig = field(default_factory=SimConfig)
    live: LiveBackendConfig = field(default_factory=LiveBackendConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    output_dir: str = "runs"
    root_seed: int | None = None

    def __post_init__(self) -> None:
        if not self.slo > 0:
            raise ValueError("slo must be positive")

    def budget_for(self, backend: str) -> int:
        return self.controller.budget if self.controller.budget is not None else DEFAULT_BUDGET[backend]

    @property
    def seed(self) -> int:
        """Root seed for simulator streams; ``root_seed`` wins over ``simulator.seed``."""
        return self.root_seed if self.root_seed is not None else self.simulator.seed

    def sim_config(self) -> SimConfig:
        return self.simulator.with_seed(self.seed)

    def to_dict(self) -> dict[str, Any]:
        scoring = {y: getattr(self.scoring, f) for y, f in SCORING_KEYS.items()}
        return {
            "slo": self.slo,
            "scoring": scoring,
            "simulator": dataclasses.asdict(self.simulator),
            "live": dataclasses.asdict(self.live),
            "controller": dataclasses.asdict(self.controller),
            "output_dir": self.output_dir,
            "root_seed": self.root_seed,
        }

    def digest(self) -> str:
        """sha256 of the canonical JSON form; equal configs hash equal."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _check_keys(section: str, given: dict, allowed: set[str]) -> None:
    unknown = sorted(set(given) - allowed)
    if unknown:
        where = f" in section {section!r}" if section else ""
        raise ConfigError(f"unknown config keys{where}: {', '.join(unknown)}")


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(value).__name__}")
    return value


def _build(section: str, cls: type, kwargs: dict) -> Any:
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        msg = str(e)
        if section not in msg:
            msg = f"{section}: {msg}"
        raise ConfigError(msg) from e


def config_from_dict(raw: dict | None) -> AppConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys("", raw, set(TOP_LEVEL_KEYS))

    scoring_raw = _section(raw, "scoring")
    _check_keys("scoring", scoring_raw, set(SCORING_KEYS))
    scoring = _build("scoring", ScoreWeights, {SCORING_KEYS[k]: v for k, v in scoring_raw.items()})

    sim_raw = _section(raw, "simulator")
    _check_keys("simulator", sim_raw, set(SimConfig.field_names()))
    simulator = _build("simulator", SimConfig, sim_raw)

    live_raw = _section(raw, "live")
    _check_keys("live", live_raw, {f.name for f in dataclasses.fields(LiveBackendConfig)})
    live = _build("live", LiveBackendConfig, live_raw)

    ctl_raw = _section(raw, "controller")
    _check_keys("controller", ctl_raw, {f.name for f in dataclasses.fields(ControllerConfig)})
    controller = _build("controller", ControllerConfig, ctl_raw)

    top: dict[str, Any] = {}
    if "slo" in raw:
        top["slo"] = raw["slo"]
    if "output_dir" in raw:
        top["output_dir"] = str(raw["output_dir"])
    if raw.get("root_seed") is not None:
        if not isinstance(raw["root_seed"], int) or isinstance(raw["root_seed"], bool):
            raise ConfigError("root_seed must be an integer")
        top["root_seed"] = raw["root_seed"]
    if "slo" in top and not isinstance(top["slo"], (int, float)):
        raise ConfigError("slo must be a number")
    try:
        return AppConfig(scoring=scoring, simulator=simulator, live=live, controller=controller, **top)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def load_config(path: str | Path | None) -> AppConfig:
    """Parse a YAML file into an AppConfig; ``None`` gives all defaults."""
    if path is None:
        return AppConfig()
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    return config_from_dict(raw)
