"""INI-style run configuration: [scene], [planner] and [train] sections."""

from __future__ import annotations

import configparser
from dataclasses import fields

from .planner.model import PlannerConfig
from .scene_sim import SceneConfig


class ConfigError(ValueError):
    pass


def load_config(path: str | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path is not None:
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path!r}")
    return parser


def _coerce(value: str, target_type: type):
    if target_type is bool:
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {value!r}")
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    return value


def scene_config_from(parser: configparser.ConfigParser) -> SceneConfig:
    cfg = SceneConfig()
    if not parser.has_section("scene"):
        return cfg
    section = parser["scene"]
    if "n_frames" in section:
        cfg.n_frames = int(section["n_frames"])
    if "agents_min" in section or "agents_max" in section:
        cfg.n_agents = (
            int(section.get("agents_min", cfg.n_agents[0])),
            int(section.get("agents_max", cfg.n_agents[1])),
        )
    if "ego_speed_min" in section or "ego_speed_max" in section:
        cfg.ego_speed = (
            float(section.get("ego_speed_min", cfg.ego_speed[0])),
            float(section.get("ego_speed_max", cfg.ego_speed[1])),
        )
    if "command" in section:
        cfg.command = section["command"]
    cfg.validate()
    return cfg


_PLANNER_KEYS = {f.name: f.type for f in fields(PlannerConfig)}
_PLANNER_TYPES = {
    "d_q": int, "d_llm": int, "n_layers": int, "n_heads": int, "context": int,
    "chain": str, "rp_embedding": str, "use_queries": bool, "max_queries": int,
    "feature_seed": int, "center_noise": float, "lr": float, "weight_decay": float,
    "warmup_frac": float, "epochs": int, "max_new_tokens": int,
}


def planner_config_from(parser: configparser.ConfigParser, **overrides) -> PlannerConfig:
    """PlannerConfig from the [planner]/[train] sections plus CLI overrides."""
    values: dict = {}
    for section_name in ("planner", "train"):
        if parser.has_section(section_name):
            for key, raw in parser[section_name].items():
                if key not in _PLANNER_TYPES:
                    raise ConfigError(f"unknown [{section_name}] key {key!r}")
                values[key] = _coerce(raw, _PLANNER_TYPES[key])
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    cfg = PlannerConfig(**values)
    cfg.validate()
    return cfg
