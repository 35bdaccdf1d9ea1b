"""
Experiment Config
Loads, validates and resolves experiment files.

Files are TOML with one table per section (or the JSON a run directory
persists). Values missing from the file are filled from the task preset in
data/task_presets.json; `--override key=value` pairs win over both.
"""

from __future__ import annotations

import copy
import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from agents.samplers import SamplerKind
from tools.errors import ConfigError
from tools.oracles import as_cost, get_task_preset

TaskName = Literal["branin", "hartmann6", "sequence_toy"]
SEED_ENV_VAR = "MFGFN_SEED"


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class TaskSection(Section):
    name: TaskName = "branin"
    sampler: SamplerKind = SamplerKind.MF_GFN
    seed: Optional[int] = None
    output_dir: str = "runs"
    run_name: Optional[str] = None


class BudgetSection(Section):
    gamma: Optional[float] = Field(default=None, ge=0)
    costs: Optional[List[str]] = None
    count_init_budget: bool = False

    @field_validator("costs", mode="before")
    @classmethod
    def _costs_as_text(cls, value):
        if value is None:
            return None
        costs = [str(v) for v in value]
        for c in costs:
            try:
                parsed = as_cost(c)
            except (ValueError, ZeroDivisionError) as e:
                raise ValueError(f"cost {c!r} is not a number") from e
            if parsed <= 0:
                raise ValueError(f"cost {c!r} must be positive")
        return costs


class LoopSection(Section):
    batch_size: Optional[int] = Field(default=None, ge=1)
    n_proposals: Optional[int] = Field(default=None, ge=1)
    top_k: Optional[int] = Field(default=None, ge=1)
    diversity_threshold: Optional[float] = Field(default=None, ge=0, le=1)
    max_rounds: Optional[int] = Field(default=None, ge=0)


class SurrogateSection(Section):
    kernel: Literal["rbf", "matern52"] = "rbf"
    n_steps: int = Field(default=200, ge=0)
    learning_rate: float = Field(default=0.05, gt=0)
    restarts: int = Field(default=2, ge=1)
    optimize: bool = True
    noise_variance: float = Field(default=1e-3, gt=0)


class AcquisitionSection(Section):
    n_max_value_samples: int = Field(default=10, ge=1)
    candidate_pool_size: int = Field(default=1000, ge=1)
    gibbon_batch_term: bool = False


class PolicySection(Section):
    hidden_width: int = Field(default=128, ge=1)
    n_hidden: int = Field(default=2, ge=1)


class TrainingSection(Section):
    n_trajectories: int = Field(default=2000, ge=1)
    batch_size: int = Field(default=16, ge=1)
    epsilon: float = Field(default=0.1, ge=0, le=1)
    lr: float = Field(default=1e-3, gt=0)
    lr_log_z: float = Field(default=0.1, gt=0)
    reward_exponent: float = Field(default=1.0, gt=0)
    reinit_each_round: bool = False


class RewardSection(Section):
    beta: Optional[float] = Field(default=None, gt=0)
    rho: Optional[float] = Field(default=None, ge=1)


class InitSection(Section):
    mf: Optional[List[int]] = None
    sf: Optional[int] = Field(default=None, ge=0)

    @field_validator("mf")
    @classmethod
    def _non_negative(cls, value):
        if value is not None and any(c < 0 for c in value):
            raise ValueError("initial counts must be >= 0")
        return value


class AblationSection(Section):
    cost_pairs: List[Tuple[str, str]] = Field(default_factory=list)
    threshold_fraction: float = Field(default=0.9, ge=0, le=1)
    # empty: the task seed alone
    seeds: List[int] = Field(default_factory=list)

    @field_validator("cost_pairs", mode="before")
    @classmethod
    def _pairs_as_text(cls, value):
        return [tuple(str(c) for c in pair) for pair in value]


class ExperimentConfig(Section):
    task: TaskSection = Field(default_factory=TaskSection)
    budget: BudgetSection = Field(default_factory=BudgetSection)
    loop: LoopSection = Field(default_factory=LoopSection)
    surrogate: SurrogateSection = Field(default_factory=SurrogateSection)
    acquisition: AcquisitionSection = Field(default_factory=AcquisitionSection)
    policy: PolicySection = Field(default_factory=PolicySection)
    training: TrainingSection = Field(default_factory=TrainingSection)
    reward: RewardSection = Field(default_factory=RewardSection)
    init: InitSection = Field(default_factory=InitSection)
    ablation: AblationSection = Field(default_factory=AblationSection)

    @property
    def seed(self) -> int:
        return int(self.task.seed or 0)

    @property
    def n_fidelities(self) -> int:
        return len(self.budget.costs or [])

    @property
    def run_name(self) -> str:
        return self.task.run_name or f"{self.task.name}_{self.task.sampler.value}_seed{self.seed}"

    def initial_counts(self) -> List[int]:
        """Per-fidelity initial annotation counts for the configured sampler."""
        if self.task.sampler == SamplerKind.SF_GFN:
            return [0] * (self.n_fidelities - 1) + [int(self.init.sf or 0)]
        return list(self.init.mf or [])

    def resolved(self) -> "ExperimentConfig":
        """Copy with every preset-backed field filled in and cross-checked."""
        preset = get_task_preset(self.task.name)
        if preset["status"] != "success":
            raise ConfigError(preset["error_message"])
        data = self.model_dump(mode="json")
        fill = {
            ("budget", "gamma"): preset["gamma"],
            ("budget", "costs"): preset["costs"],
            ("loop", "batch_size"): preset["batch_size"],
            ("loop", "top_k"): preset["top_k"],
            ("loop", "diversity_threshold"): preset["diversity_threshold"],
            ("reward", "beta"): preset["beta"],
            ("reward", "rho"): preset["rho"],
            ("init", "mf"): preset["init_mf"],
            ("init", "sf"): preset["init_sf"],
        }
        for (section, key), value in fill.items():
            if data[section][key] is None:
                data[section][key] = value
        if data["loop"]["n_proposals"] is None:
            data["loop"]["n_proposals"] = 10 * data["loop"]["batch_size"]
        if data["task"]["seed"] is None:
            data["task"]["seed"] = _seed_from_environment()

        n_fidelities = len(preset["costs"])
        if len(data["budget"]["costs"]) != n_fidelities:
            raise ConfigError(
                f"budget.costs: {self.task.name} has {n_fidelities} fidelities, got {len(data['budget']['costs'])} costs"
            )
        if len(data["init"]["mf"]) != n_fidelities:
            raise ConfigError(f"init.mf: expected {n_fidelities} counts, got {len(data['init']['mf'])}")
        return _validate(data)

    def with_updates(self, updates: Dict[str, Dict[str, Any]]) -> "ExperimentConfig":
        data = self.model_dump(mode="json")
        for section, values in updates.items():
            data[section].update(values)
        return _validate(data)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def _seed_from_environment() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"{SEED_ENV_VAR}={raw!r} is not an integer") from e


def _validate(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"{where}: {first['msg']}") from e


def _leaf_sections() -> Dict[str, List[str]]:
    leaves: Dict[str, List[str]] = {}
    for section, info in ExperimentConfig.model_fields.items():
        for leaf in info.annotation.model_fields:
            leaves.setdefault(leaf, []).append(section)
    return leaves


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """
    Apply `key=value` overrides. Keys are `section.field` or a bare field
    name that belongs to exactly one section; values use TOML syntax and
    fall back to plain strings.

    Example:
        >>> apply_overrides({}, ["gamma=10", "task.seed=3"])
        {'budget': {'gamma': 10}, 'task': {'seed': 3}}
    """
    data = copy.deepcopy(data)
    leaves = _leaf_sections()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = (part.strip() for part in item.split("=", 1))
        if "." in key:
            section, leaf = key.split(".", 1)
        else:
            owners = leaves.get(key, [])
            if len(owners) != 1:
                reason = "is ambiguous between " + ", ".join(owners) if owners else "is not a config field"
                raise ConfigError(f"override key {key!r} {reason}")
            section, leaf = owners[0], key
        if section not in ExperimentConfig.model_fields:
            raise ConfigError(f"override key {key!r}: unknown section {section!r}")
        data.setdefault(section, {})[leaf] = _parse_value(text)
    return data


def read_config_file(path: str) -> Dict[str, Any]:
    file = Path(path)
    if not file.exists():
        raise ConfigError(f"config file not found: {path}")
    text = file.read_text()
    try:
        if file.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}: {e.msg}") from e


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """
    Load an experiment file, apply overrides and fill task presets.

    Args:
        path: TOML or JSON experiment file; None starts from defaults
        overrides: `key=value` strings

    Returns:
        fully resolved ExperimentConfig

    Raises:
        ConfigError: naming the offending field or file line
    """
    data = read_config_file(path) if path else {}
    data = apply_overrides(data, overrides)
    return _validate(data).resolved()
