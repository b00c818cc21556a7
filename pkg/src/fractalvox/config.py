"""Experiment configuration: a strict, versioned, round-trippable schema.

Unknown keys are rejected rather than ignored so a misspelled
hyperparameter fails loudly instead of silently running defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .physics.params import ActuationMode, MaterialParams, SolverParams

SCHEMA_VERSION = 1

CONDITIONS = ("fractal", "control")
MODES = tuple(m.value for m in ActuationMode)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one evolutionary experiment (or a batch of trials)."""

    schema: int = SCHEMA_VERSION
    seed: int = 0
    condition: str = "fractal"
    mode: str = "antiphase"
    population_size: int = 16
    generations: int = 325
    scale_levels: tuple[int, ...] = (0, 1, 2)
    workspace_extent: int = 3
    eval_duration: float = 5.0
    trials: int = 1
    mutation_noise: float = 0.5
    hidden_nodes: tuple[int, int] = (0, 4)
    voxel_budget: int = 250_000
    gravity: float = 9.81
    material: MaterialParams = field(default_factory=MaterialParams)
    solver: SolverParams = field(default_factory=SolverParams)

    def __post_init__(self):
        if self.schema != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {self.schema}")
        if self.condition not in CONDITIONS:
            raise ConfigError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.population_size < 2:
            raise ConfigError("population_size must be >= 2")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        levels = tuple(int(v) for v in self.scale_levels)
        if not levels:
            raise ConfigError("scale_levels must be non-empty")
        if sorted(set(levels)) != list(levels):
            raise ConfigError("scale_levels must be sorted and unique")
        if levels[0] < 0:
            raise ConfigError("scale levels must be >= 0")
        object.__setattr__(self, "scale_levels", levels)
        if self.condition == "control" and levels[-1] > 2:
            raise ConfigError("the control condition defines placements up to level 2 only")
        if self.workspace_extent < 2:
            raise ConfigError("workspace_extent must be >= 2")
        if self.eval_duration <= 0:
            raise ConfigError("eval_duration must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        hidden = tuple(int(v) for v in self.hidden_nodes)
        if len(hidden) != 2 or hidden[0] < 0 or hidden[1] < hidden[0]:
            raise ConfigError("hidden_nodes must be a (low, high) pair with 0 <= low <= high")
        object.__setattr__(self, "hidden_nodes", hidden)

    @property
    def actuation_mode(self) -> ActuationMode:
        return ActuationMode(self.mode)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["scale_levels"] = list(self.scale_levels)
        doc["hidden_nodes"] = list(self.hidden_nodes)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict, where: str = "config") -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError(f"{where}: expected an object")
        known = {f.name for f in dataclasses.fields(cls)}
        for key in doc:
            if key not in known:
                raise ConfigError(f"{where}: unknown key {key!r}")
        kwargs = dict(doc)
        if "material" in kwargs and kwargs["material"] is not None:
            kwargs["material"] = _sub_config(MaterialParams, kwargs["material"],
                                             f"{where}.material")
        if "solver" in kwargs and kwargs["solver"] is not None:
            kwargs["solver"] = _sub_config(SolverParams, kwargs["solver"],
                                           f"{where}.solver")
        for key in ("scale_levels", "hidden_nodes"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"{where}: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(doc)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            text = fh.read()
        try:
            return cls.from_json(text)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def _sub_config(cls, doc, where):
    if isinstance(doc, cls):
        return doc
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


# the evolutionary loop consumes the same object
EvolutionConfig = ExperimentConfig
