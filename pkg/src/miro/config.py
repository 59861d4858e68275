"""Declarative experiment configuration.

Config files are line-oriented ``key = value`` entries under ``[section]``
headers (grammar documented in docs/config-format.md).  Unknown sections
or keys fail with the offending line number; every field has a default,
so the empty file is a valid experiment.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .agent import TrainSchedule
from .envs import EnvConfig, action_dim
from .errors import ConfigError
from .model import ModelDims
from .planner import CEMConfig

__all__ = ["ExperimentConfig", "parse_config", "parse_config_text", "default_config"]

VARIANTS = ("miro", "recon")
TIMING_MODES = ("none", "real")


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    model: ModelDims = field(default_factory=ModelDims)
    planner: CEMConfig = field(default_factory=CEMConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    variant: str = "miro"
    lam1: float = 1.0
    lam2: float = 10.0
    seeds: tuple = (0, 1, 2)
    output_dir: str = "runs"
    timing: str = "none"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.timing not in TIMING_MODES:
            raise ConfigError(f"timing must be one of {TIMING_MODES}, got {self.timing!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.lam1 < 0 or self.lam2 < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.variant == "recon" and not self.model.decoder:
            raise ConfigError("variant 'recon' requires decoder dimensions")
        if self.model.image_size != self.env.image_size:
            raise ConfigError("model image_size must match the environment image_size")
        if self.model.action_dim != action_dim(self.env.task):
            raise ConfigError(
                f"model action_dim {self.model.action_dim} does not match task "
                f"{self.env.task!r} ({action_dim(self.env.task)})"
            )
        if self.schedule.chunk_len <= max(self.model.nce_horizons):
            raise ConfigError("chunk_len must exceed the largest contrastive horizon")

    def run_id(self) -> str:
        """Deterministic id for the full configuration (all seeds)."""
        return hashlib.sha256(repr(self).encode()).hexdigest()[:12]


def default_config(**overrides) -> ExperimentConfig:
    """Programmatic construction mirroring the file format's defaults."""
    return _assemble({}, overrides)


# ---------------------------------------------------------------------------
# file format

_INT = "int"
_FLOAT = "float"
_STR = "str"
_INT_TUPLE = "int_tuple"
_OPT_INT = "optional_int"
_OPT_INT_TUPLE = "optional_int_tuple"

# (section, key) -> (kind, target group, field name)
_SCHEMA = {
    ("run", "variant"): (_STR, "run", "variant"),
    ("run", "seeds"): (_INT_TUPLE, "run", "seeds"),
    ("run", "output_dir"): (_STR, "run", "output_dir"),
    ("run", "timing"): (_STR, "run", "timing"),
    ("env", "task"): (_STR, "env", "task"),
    ("env", "image_size"): (_INT, "env", "image_size"),
    ("env", "episode_len"): (_INT, "env", "episode_len"),
    ("env", "distractors"): (_INT, "env", "distractors"),
    ("env", "dynamics_seed"): (_INT, "env", "dynamics_seed"),
    ("env", "distractor_seed"): (_INT, "env", "distractor_seed"),
    ("model", "n_z"): (_INT, "model", "n_z"),
    ("model", "n_s"): (_INT, "model", "n_s"),
    ("model", "hidden"): (_INT, "model", "hidden"),
    ("model", "conv_channels"): (_INT_TUPLE, "model", "conv_channels"),
    ("model", "kernel"): (_INT, "model", "kernel"),
    ("model", "conv_stride"): (_INT, "model", "conv_stride"),
    ("model", "decoder_widths"): (_OPT_INT_TUPLE, "model", "decoder_widths"),
    ("loss", "lambda1"): (_FLOAT, "run", "lam1"),
    ("loss", "lambda2"): (_FLOAT, "run", "lam2"),
    ("loss", "nce_horizons"): (_INT_TUPLE, "model", "nce_horizons"),
    ("planner", "horizon"): (_INT, "planner", "horizon"),
    ("planner", "population"): (_INT, "planner", "population"),
    ("planner", "elites"): (_INT, "planner", "elites"),
    ("planner", "iterations"): (_INT, "planner", "iterations"),
    ("planner", "init_std"): (_FLOAT, "planner", "init_std"),
    ("train", "seed_episodes"): (_INT, "schedule", "seed_episodes"),
    ("train", "collect_episodes"): (_INT, "schedule", "collect_episodes"),
    ("train", "steps_per_episode"): (_INT, "schedule", "steps_per_episode"),
    ("train", "batch_size"): (_INT, "schedule", "batch_size"),
    ("train", "chunk_len"): (_INT, "schedule", "chunk_len"),
    ("train", "explore_std"): (_FLOAT, "schedule", "explore_std"),
    ("train", "learning_rate"): (_FLOAT, "schedule", "learning_rate"),
    ("train", "replay_capacity"): (_OPT_INT, "schedule", "replay_capacity"),
}


def _convert(kind, raw, line_no):
    try:
        if kind == _INT:
            return int(raw)
        if kind == _FLOAT:
            return float(raw)
        if kind == _STR:
            return raw
        if kind == _INT_TUPLE:
            return tuple(int(p.strip()) for p in raw.split(",") if p.strip())
        if kind == _OPT_INT:
            return None if raw == "" else int(raw)
        if kind == _OPT_INT_TUPLE:
            return None if raw == "" else tuple(int(p.strip()) for p in raw.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: cannot parse value {raw!r}: {exc}") from None
    raise ConfigError(f"internal: unknown kind {kind}")


def parse_config_text(text: str) -> ExperimentConfig:
    section = None
    values: dict[tuple, object] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in {s for s, _ in _SCHEMA}:
                raise ConfigError(f"line {line_no}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw_line.rstrip()!r}")
        if section is None:
            raise ConfigError(f"line {line_no}: key outside of any [section]")
        key, raw = (p.strip() for p in line.split("=", 1))
        if (section, key) not in _SCHEMA:
            raise ConfigError(f"line {line_no}: unknown key {key!r} in section [{section}]")
        kind, group, field_name = _SCHEMA[(section, key)]
        values[(group, field_name)] = _convert(kind, raw, line_no)

    grouped: dict[str, dict] = {}
    for (group, field_name), v in values.items():
        grouped.setdefault(group, {})[field_name] = v
    return _assemble(grouped, {})


def _assemble(grouped: dict, overrides: dict) -> ExperimentConfig:
    run_kw = dict(grouped.get("run", {}))
    env_kw = dict(grouped.get("env", {}))
    model_kw = dict(grouped.get("model", {}))
    planner_kw = dict(grouped.get("planner", {}))
    schedule_kw = dict(grouped.get("schedule", {}))
    for k, v in overrides.items():
        run_kw[k] = v

    env = run_kw.pop("env", None) or EnvConfig(**env_kw)
    variant = run_kw.get("variant", "miro")
    model_kw.setdefault("image_size", env.image_size)
    model_kw.setdefault("action_dim", action_dim(env.task))
    model_kw.setdefault("decoder", variant == "recon")
    model = run_kw.pop("model", None) or ModelDims(**model_kw)
    planner = run_kw.pop("planner", None) or CEMConfig(**planner_kw)
    schedule = run_kw.pop("schedule", None) or TrainSchedule(**schedule_kw)
    return ExperimentConfig(env=env, model=model, planner=planner, schedule=schedule, **run_kw)


def parse_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())
