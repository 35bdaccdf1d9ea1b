"""
Oracles
Synthetic multi-fidelity oracle families with per-fidelity query costs,
plus batch evaluation with exact cost accounting.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from tools.environments import (
    Environment,
    HyperGrid,
    Payload,
    SequenceSpace,
    parse_object,
)
from tools.errors import DomainError, InvalidTokenError, MfgfnError, OracleError

logger = logging.getLogger(__name__)

PRESETS_PATH = os.path.join(os.path.dirname(__file__), "..", "data", "task_presets.json")

BRANIN_BOUNDS = np.array([[-5.0, 10.0], [0.0, 15.0]])
HARTMANN_BOUNDS = np.array([[0.0, 1.0]] * 6)

HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
HARTMANN_DELTA = np.array([0.01, -0.01, -0.1, 0.1])
HARTMANN_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
HARTMANN_P = 1e-4 * np.array(
    [
        [1312, 1696, 5569, 124, 8283, 5886],
        [2329, 4135, 8307, 3736, 1004, 9991],
        [2348, 1451, 3522, 2883, 3047, 6650],
        [4047, 8828, 8732, 5743, 1091, 381],
    ]
)

COMPLEMENT = {"A": "T", "T": "A", "C": "G", "G": "C"}

Cost = Union[Fraction, float, str, int]


def as_cost(value: Cost) -> Fraction:
    """Exact cost from its decimal text (0.1 stays 1/10, not the nearest double)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(str(value))


# -- Branin --------------------------------------------------------------------


def _check_box(x: np.ndarray, bounds: np.ndarray, name: str) -> None:
    lo, hi = bounds[:, 0], bounds[:, 1]
    if x.shape[-1] != len(bounds):
        raise DomainError(f"{name} expects {len(bounds)} coordinates, got {x.shape[-1]}")
    if np.any(~np.isfinite(x)) or np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise DomainError(f"{name} point outside {bounds.tolist()}")


def _branin_true(x: np.ndarray) -> np.ndarray:
    x1, x2 = x[..., 0], x[..., 1]
    return (
        (x2 - 1.25 * x1**2 / np.pi**2 + 5.0 * x1 / np.pi - 6.0) ** 2
        + (10.0 - 5.0 / (4.0 * np.pi)) * np.cos(x1)
        + 10.0
    )


def _branin_medium(x: np.ndarray) -> np.ndarray:
    x1, x2 = x[..., 0], x[..., 1]
    # f >= 0 everywhere, the clamp only guards rounding
    radicand = np.maximum(_branin_true(x - 2.0), 0.0)
    return 10.0 * np.sqrt(radicand) + 2.0 * (x1 - 0.5) - 3.0 * (3.0 * x2 - 1.0) - 1.0


def _branin_low(x: np.ndarray) -> np.ndarray:
    return _branin_medium(1.2 * (x + 2.0)) - 3.0 * x[..., 1] + 1.0


_BRANIN_LEVELS = {1: _branin_low, 2: _branin_medium, 3: _branin_true}


def branin_values(m: int, x: np.ndarray) -> np.ndarray:
    """Vectorised Branin fidelity `m` over points of shape (..., 2)."""
    if m not in _BRANIN_LEVELS:
        raise DomainError(f"Branin fidelity must be 1, 2 or 3, got {m}")
    x = np.asarray(x, dtype=float)
    _check_box(x, BRANIN_BOUNDS, "Branin")
    return _BRANIN_LEVELS[m](x)


def branin(m: int, x: Sequence[float]) -> float:
    """
    Branin oracle at fidelity m (3 is the true function, to be minimised).

    Args:
        m: fidelity in {1, 2, 3}
        x: point in [-5, 10] x [0, 15]

    Example:
        >>> round(branin(3, [np.pi, 2.25]), 6)
        0.397887
    """
    return float(branin_values(m, np.asarray(x, dtype=float)))


# -- Hartmann 6D -------------------------------------------------------------


def hartmann_values(m: int, x: np.ndarray, n_fidelities: int = 3) -> np.ndarray:
    """Vectorised Hartmann-6 with alpha(m) = alpha + (M - m) * delta."""
    if not 1 <= m <= n_fidelities:
        raise DomainError(f"Hartmann fidelity must be in 1..{n_fidelities}, got {m}")
    x = np.asarray(x, dtype=float)
    _check_box(x, HARTMANN_BOUNDS, "Hartmann")
    alpha = HARTMANN_ALPHA + (n_fidelities - m) * HARTMANN_DELTA
    sq = (x[..., None, :] - HARTMANN_P) ** 2
    inner = np.sum(HARTMANN_A * sq, axis=-1)
    return np.exp(-inner) @ alpha


def hartmann(m: int, x: Sequence[float]) -> float:
    """Hartmann-6 oracle at fidelity m (3 is the true function, to be maximised)."""
    return float(hartmann_values(m, np.asarray(x, dtype=float)))


# -- toy sequence energy ----------------------------------------------------


def _as_text(seq: Union[str, Sequence[int]], vocabulary: str = "ACGT") -> str:
    if isinstance(seq, str):
        text = seq.upper()
    else:
        try:
            text = "".join(vocabulary[int(t)] for t in seq)
        except (IndexError, ValueError) as e:
            raise InvalidTokenError(f"token outside vocabulary {vocabulary!r}: {e}") from e
    unknown = sorted(set(text) - set(COMPLEMENT))
    if unknown:
        raise InvalidTokenError(f"invalid bases {unknown}; expected A, C, G or T")
    return text


def _energy(text: str) -> int:
    pairs = sum(1 for a, b in zip(text, text[1:]) if COMPLEMENT[a] == b)
    palindromes = 0
    for i in range(len(text) - 3):
        window = text[i : i + 4]
        if "".join(COMPLEMENT[c] for c in reversed(window)) == window:
            palindromes += 1
    return pairs + 2 * palindromes


def low_fidelity_prefix(length: int) -> int:
    return math.ceil(2 * length / 3)


def toy_sequence_energy(m: int, seq: Union[str, Sequence[int]], vocabulary: str = "ACGT") -> float:
    """
    Deterministic stand-in for a secondary-structure energy, to be maximised.

    m=2 counts complementary adjacent pairs plus 2 per reverse-complement
    palindromic 4-mer; m=1 scores only the first ceil(2L/3) bases.

    Example:
        >>> toy_sequence_energy(2, "ATATATAT")
        17.0
    """
    if m not in (1, 2):
        raise DomainError(f"sequence fidelity must be 1 or 2, got {m}")
    text = _as_text(seq, vocabulary)
    if m == 1:
        text = text[: low_fidelity_prefix(len(text))]
    return float(_energy(text))


def sequence_energy_values(m: int, tokens: np.ndarray, vocabulary: str = "ACGT") -> np.ndarray:
    """Vectorised toy energy over an integer token array of shape (n, L)."""
    if m not in (1, 2):
        raise DomainError(f"sequence fidelity must be 1 or 2, got {m}")
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if np.any(tokens < 0) or np.any(tokens >= len(vocabulary)):
        raise InvalidTokenError(f"token outside vocabulary {vocabulary!r}")
    bad = sorted(set(vocabulary) - set(COMPLEMENT))
    if bad:
        raise InvalidTokenError(f"vocabulary contains non-nucleotide tokens {bad}")
    complement = np.array([vocabulary.index(COMPLEMENT[c]) for c in vocabulary])
    if m == 1:
        tokens = tokens[:, : low_fidelity_prefix(tokens.shape[1])]
    pairs = np.sum(complement[tokens[:, :-1]] == tokens[:, 1:], axis=1)
    palindromes = np.zeros(tokens.shape[0], dtype=np.int64)
    for i in range(tokens.shape[1] - 3):
        window = tokens[:, i : i + 4]
        revcomp = complement[window[:, ::-1]]
        palindromes += np.all(revcomp == window, axis=1)
    return (pairs + 2 * palindromes).astype(float)


# -- oracle sets ---------------------------------------------------------------


def grid_to_domain(cells: np.ndarray, bounds: np.ndarray, length: int) -> np.ndarray:
    """Affine map of grid indices onto cell centres: i -> lo + i (hi - lo) / (L - 1)."""
    cells = np.asarray(cells, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    return lo + cells * (hi - lo) / max(length - 1, 1)


Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Annotation:
    x: Payload
    y: float
    m: int
    cost: Fraction


@dataclass(frozen=True)
class OracleSet:
    """
    M oracles over the terminal objects of one environment, cheapest first.

    `evaluators[m - 1]` maps an integer object array (n, object_dim) to raw
    oracle values; `score_sign` turns raw values into "larger is better".
    """

    name: str
    evaluators: Tuple[Evaluator, ...]
    costs: Tuple[Fraction, ...]
    score_sign: int = 1

    def __post_init__(self):
        if len(self.evaluators) < 1 or len(self.evaluators) != len(self.costs):
            raise ValueError("an oracle set needs one cost per evaluator and at least one oracle")
        if any(c <= 0 for c in self.costs):
            raise ValueError(f"oracle costs must be positive, got {self.costs}")
        if any(b < a for a, b in zip(self.costs, self.costs[1:])):
            raise ValueError(f"oracle costs must increase with fidelity, got {self.costs}")
        if any(b == a for a, b in zip(self.costs, self.costs[1:])):
            logger.warning("oracle set %s has equal costs %s", self.name, [str(c) for c in self.costs])
        if self.score_sign not in (1, -1):
            raise ValueError("score_sign must be +1 or -1")

    @property
    def n_fidelities(self) -> int:
        return len(self.evaluators)

    def cost(self, m: int) -> Fraction:
        return self.costs[m - 1]

    def evaluate(self, m: int, objects: Sequence[Payload]) -> np.ndarray:
        if not 1 <= m <= self.n_fidelities:
            raise DomainError(f"fidelity {m} outside 1..{self.n_fidelities}")
        if len(objects) == 0:
            return np.zeros(0)
        return np.asarray(self.evaluators[m - 1](np.asarray(objects, dtype=np.int64)), dtype=float)

    def score(self, objects: Sequence[Payload]) -> np.ndarray:
        """Target-fidelity values oriented so that larger is better."""
        return self.score_sign * self.evaluate(self.n_fidelities, objects)

    def with_costs(self, costs: Sequence[Cost]) -> "OracleSet":
        return OracleSet(self.name, self.evaluators, tuple(as_cost(c) for c in costs), self.score_sign)


def evaluate_batch(oracle_set: OracleSet, queries: Sequence[Tuple[Payload, int]]) -> Tuple[List[Annotation], Fraction]:
    """
    Evaluate each (x, m) query with the corresponding oracle.

    Returns:
        annotations in query order and the exact total cost.

    Example:
        >>> annotations, cost = evaluate_batch(branin_set, [(x, 1), (x, 1), (x, 3)])
        >>> cost
        Fraction(51, 50)
    """
    annotations: List[Annotation] = []
    total = Fraction(0)
    for i, (x, m) in enumerate(queries):
        try:
            y = float(oracle_set.evaluate(m, [x])[0])
        except MfgfnError as e:
            raise OracleError(i, str(e)) from e
        cost = oracle_set.cost(m)
        annotations.append(Annotation(x=tuple(x), y=y, m=m, cost=cost))
        total += cost
    return annotations, total


def get_task_preset(task: str) -> Dict:
    """
    Get the published settings (costs, budgets, initial data, reward transform) for a task.

    Args:
        task: one of "branin", "hartmann6", "sequence_toy"

    Returns:
        dict with status plus the preset fields, or the available task names.
    """
    try:
        with open(PRESETS_PATH, "r") as f:
            presets = json.load(f)

        if task in presets:
            return {"status": "success", **presets[task]}
        return {
            "status": "error",
            "error_message": f"Unknown task: {task}",
            "available_tasks": list(presets.keys()),
        }

    except FileNotFoundError:
        return {"status": "error", "error_message": "Task preset file not found"}
    except json.JSONDecodeError as e:
        return {"status": "error", "error_message": f"Error loading task presets: {e}"}


def make_environment(task: str, multi_fidelity: bool = True, n_fidelities: Optional[int] = None, **overrides) -> Environment:
    preset = get_task_preset(task)
    if preset["status"] != "success":
        raise DomainError(preset["error_message"])
    layout = {**preset["environment"], **{k: v for k, v in overrides.items() if v is not None}}
    n_fidelities = n_fidelities or len(preset["costs"])
    if layout["kind"] == "grid":
        return HyperGrid(int(layout["length"]), int(layout["n_dims"]), n_fidelities=n_fidelities, multi_fidelity=multi_fidelity)
    return SequenceSpace(int(layout["length"]), str(layout["vocabulary"]), n_fidelities=n_fidelities, multi_fidelity=multi_fidelity)


def make_oracle_set(task: str, env: Environment, costs: Optional[Sequence[Cost]] = None) -> OracleSet:
    """Build the oracle family of `task` over the objects of `env`."""
    preset = get_task_preset(task)
    if preset["status"] != "success":
        raise DomainError(preset["error_message"])
    costs = tuple(as_cost(c) for c in (costs if costs is not None else preset["costs"]))

    if task == "branin":
        def level(m: int) -> Evaluator:
            return lambda cells: branin_values(m, grid_to_domain(cells, BRANIN_BOUNDS, env.length))
        return OracleSet("branin", tuple(level(m) for m in (1, 2, 3)), costs, score_sign=-1)

    if task == "hartmann6":
        def level(m: int) -> Evaluator:
            return lambda cells: hartmann_values(m, grid_to_domain(cells, HARTMANN_BOUNDS, env.length))
        return OracleSet("hartmann6", tuple(level(m) for m in (1, 2, 3)), costs, score_sign=1)

    if task == "sequence_toy":
        def level(m: int) -> Evaluator:
            return lambda tokens: sequence_energy_values(m, tokens, env.vocabulary)
        return OracleSet("sequence_toy", tuple(level(m) for m in (1, 2)), costs, score_sign=1)

    raise DomainError(f"no oracle family for task {task!r}")


def explained_variance(oracle_set: OracleSet, objects: Sequence[Payload]) -> List[float]:
    """1 - Var(f_M - f_m) / Var(f_M) for each fidelity over the given objects."""
    target = oracle_set.evaluate(oracle_set.n_fidelities, objects)
    result = []
    for m in range(1, oracle_set.n_fidelities + 1):
        residual = target - oracle_set.evaluate(m, objects)
        result.append(float(1.0 - np.var(residual) / np.var(target)))
    return result


def inspect_oracle(task: str, obj: str, m: int, costs: Optional[Sequence[Cost]] = None) -> Dict:
    """
    Evaluate one object with one oracle of a task.

    Args:
        task: task name
        obj: "i,j,..." grid indices or a sequence string
        m: fidelity index

    Returns:
        dict with the value, the cost and the continuous point for grid tasks
    """
    try:
        env = make_environment(task)
        oracle_set = make_oracle_set(task, env, costs)
        x = parse_object(env, obj)
        if isinstance(env, HyperGrid):
            if len(x) != env.n_dims or any(not 0 <= c < env.length for c in x):
                raise DomainError(f"grid index {x} outside a {env.length}^{env.n_dims} grid")
        elif len(x) != env.length:
            raise InvalidTokenError(f"sequence must have length {env.length}, got {len(x)}")
        value = float(oracle_set.evaluate(m, [x])[0])
        result = {
            "status": "success",
            "task": task,
            "fidelity": m,
            "value": value,
            "cost": str(oracle_set.cost(m)),
        }
        if task == "branin":
            result["point"] = grid_to_domain(np.array(x), BRANIN_BOUNDS, env.length).tolist()
        elif task == "hartmann6":
            result["point"] = grid_to_domain(np.array(x), HARTMANN_BOUNDS, env.length).tolist()
        return result
    except (MfgfnError, ValueError) as e:
        return {"status": "error", "error_message": str(e)}
