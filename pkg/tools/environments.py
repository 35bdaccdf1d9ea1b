"""
Environments
Discrete compositional spaces (hyper-grids and fixed-length token sequences)
augmented with a one-shot fidelity-selection action.

Every object is built step by step from an empty state. In multi-fidelity
mode the sampler must also pick the oracle fidelity exactly once, at any
point of the trajectory, before it is allowed to stop.
"""

from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Sequence, Tuple, Union

import numpy as np

from tools.errors import IllegalActionError, InvalidTokenError, TooLargeError

Payload = Tuple[int, ...]
TerminalPair = Tuple[Payload, int]

DEFAULT_ENUMERATION_CAP = 10**6


class ActionKind(str, Enum):
    INCREMENT = "increment"
    APPEND = "append"
    SET_FIDELITY = "set_fidelity"
    STOP = "stop"


@dataclass(frozen=True)
class Action:
    """One entry of the action alphabet; `value` is the dimension, token or fidelity."""

    kind: ActionKind
    value: int = 0

    def __str__(self) -> str:
        if self.kind == ActionKind.STOP:
            return "Stop"
        return f"{self.kind.value}({self.value})"


@dataclass(frozen=True)
class FidState:
    payload: Payload
    fidelity: int = 0
    terminal: bool = False


@dataclass
class Trajectory:
    states: List[FidState]
    actions: List[Action] = field(default_factory=list)
    log_pf: List[float] = field(default_factory=list)
    log_pb: List[float] = field(default_factory=list)

    @property
    def terminal(self) -> FidState:
        return self.states[-1]

    @property
    def is_complete(self) -> bool:
        return self.states[-1].terminal

    def __len__(self) -> int:
        return len(self.actions)


class Environment(ABC):
    """
    Shared fidelity logic for the concrete spaces.

    The action alphabet is laid out as [base actions..., SetFidelity(1..M), Stop];
    in single-fidelity mode the SetFidelity block is absent and terminal
    objects are reported at the target fidelity M.
    """

    def __init__(
        self,
        n_fidelities: int = 1,
        multi_fidelity: bool = True,
        enumeration_cap: int = DEFAULT_ENUMERATION_CAP,
    ):
        if n_fidelities < 1:
            raise ValueError("n_fidelities must be >= 1")
        self.n_fidelities = n_fidelities
        self.multi_fidelity = multi_fidelity
        self.enumeration_cap = enumeration_cap

        base = self._base_actions()
        fidelity_actions = (
            [Action(ActionKind.SET_FIDELITY, m) for m in range(1, n_fidelities + 1)]
            if multi_fidelity
            else []
        )
        self.actions: List[Action] = base + fidelity_actions + [Action(ActionKind.STOP)]
        self._index = {action: i for i, action in enumerate(self.actions)}
        self.n_base_actions = len(base)
        self.stop_index = len(self.actions) - 1

    # -- space specific hooks -------------------------------------------------

    @abstractmethod
    def _base_actions(self) -> List[Action]: ...

    @abstractmethod
    def _initial_payload(self) -> Payload: ...

    @abstractmethod
    def _base_mask(self, payload: Payload) -> np.ndarray: ...

    @abstractmethod
    def _apply(self, payload: Payload, action: Action) -> Payload: ...

    @abstractmethod
    def _base_parents(self, payload: Payload) -> List[Tuple[Payload, Action]]: ...

    @abstractmethod
    def _is_complete(self, payload: Payload) -> bool: ...

    @abstractmethod
    def _encode_payload(self, payload: Payload) -> np.ndarray: ...

    @abstractmethod
    def _payload_depth(self, payload: Payload) -> int: ...

    @abstractmethod
    def object_array(self) -> np.ndarray:
        """All objects of the space as an integer array of shape (|X|, object_dim)."""

    @abstractmethod
    def count_objects(self) -> int: ...

    @abstractmethod
    def sample_objects(self, rng: np.random.Generator, n: int) -> List[Payload]: ...

    @abstractmethod
    def features(self, objects: Sequence[Payload]) -> np.ndarray:
        """Real-valued surrogate inputs for a batch of terminal objects."""

    @property
    @abstractmethod
    def max_depth(self) -> int:
        """Largest number of base actions in any trajectory."""

    # -- public API -----------------------------------------------------------

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def encoding_size(self) -> int:
        return len(self._encode_payload(self._initial_payload())) + self.n_fidelities + 1

    @property
    def max_trajectory_length(self) -> int:
        return self.max_depth + (1 if self.multi_fidelity else 0) + 1

    def action_index(self, action: Union[Action, int]) -> int:
        if isinstance(action, (int, np.integer)):
            return int(action)
        return self._index[action]

    def reset(self) -> FidState:
        return FidState(payload=self._initial_payload(), fidelity=0, terminal=False)

    def allowed_actions(self, state: FidState) -> np.ndarray:
        mask = np.zeros(self.n_actions, dtype=bool)
        if state.terminal:
            return mask
        mask[: self.n_base_actions] = self._base_mask(state.payload)
        if self.multi_fidelity and state.fidelity == 0:
            mask[self.n_base_actions : self.stop_index] = True
        fidelity_ready = state.fidelity >= 1 or not self.multi_fidelity
        mask[self.stop_index] = fidelity_ready and self._is_complete(state.payload)
        return mask

    def step(self, state: FidState, action: Union[Action, int]) -> FidState:
        index = self.action_index(action)
        if not 0 <= index < self.n_actions:
            raise IllegalActionError(f"action index {index} is outside the alphabet")
        if not self.allowed_actions(state)[index]:
            raise IllegalActionError(f"{self.actions[index]} is not allowed from {state}")
        action = self.actions[index]
        if action.kind == ActionKind.STOP:
            return replace(state, terminal=True)
        if action.kind == ActionKind.SET_FIDELITY:
            return replace(state, fidelity=action.value)
        return replace(state, payload=self._apply(state.payload, action))

    def parents(self, state: FidState) -> List[Tuple[FidState, Action]]:
        if state.terminal:
            return [(replace(state, terminal=False), self.actions[self.stop_index])]
        result = [
            (FidState(payload=parent, fidelity=state.fidelity), action)
            for parent, action in self._base_parents(state.payload)
        ]
        if self.multi_fidelity and state.fidelity >= 1:
            result.append(
                (
                    FidState(payload=state.payload, fidelity=0),
                    Action(ActionKind.SET_FIDELITY, state.fidelity),
                )
            )
        return result

    def backward_mask(self, state: FidState) -> np.ndarray:
        mask = np.zeros(self.n_actions, dtype=bool)
        for _, action in self.parents(state):
            mask[self._index[action]] = True
        return mask

    def depth(self, state: FidState) -> int:
        """Number of actions taken from s0 to reach `state` (excluding Stop)."""
        return self._payload_depth(state.payload) + (1 if state.fidelity >= 1 else 0)

    def encode(self, state: FidState) -> np.ndarray:
        fidelity_block = np.zeros(self.n_fidelities + 1)
        fidelity_block[state.fidelity] = 1.0
        return np.concatenate([self._encode_payload(state.payload), fidelity_block])

    def encode_batch(self, states: Sequence[FidState]) -> np.ndarray:
        if not states:
            return np.zeros((0, self.encoding_size))
        return np.stack([self.encode(s) for s in states])

    def terminal_pair(self, state: FidState) -> TerminalPair:
        fidelity = state.fidelity if self.multi_fidelity else self.n_fidelities
        return state.payload, fidelity

    def count_terminals(self) -> int:
        per_object = self.n_fidelities if self.multi_fidelity else 1
        return self.count_objects() * per_object

    def enumerate_terminals(self) -> List[TerminalPair]:
        if self.count_objects() > self.enumeration_cap:
            raise TooLargeError(
                f"{self.count_objects()} objects exceed the enumeration cap of {self.enumeration_cap}"
            )
        fidelities = range(1, self.n_fidelities + 1) if self.multi_fidelity else [self.n_fidelities]
        objects = [tuple(int(v) for v in row) for row in self.object_array()]
        return [(x, m) for x in objects for m in fidelities]

    def single_fidelity(self) -> "Environment":
        """The same space with the fidelity block fixed at the target fidelity."""
        raise NotImplementedError


class HyperGrid(Environment):
    """
    D-dimensional grid of side L. Objects are built from the origin by
    incrementing one coordinate at a time; any cell may be a final object.
    """

    kind = "grid"

    def __init__(self, length: int, n_dims: int, **kwargs):
        if length < 1 or n_dims < 1:
            raise ValueError("grid length and dimensionality must be positive")
        self.length = length
        self.n_dims = n_dims
        super().__init__(**kwargs)

    def _base_actions(self) -> List[Action]:
        return [Action(ActionKind.INCREMENT, d) for d in range(self.n_dims)]

    def _initial_payload(self) -> Payload:
        return (0,) * self.n_dims

    def _base_mask(self, payload: Payload) -> np.ndarray:
        return np.array([c < self.length - 1 for c in payload], dtype=bool)

    def _apply(self, payload: Payload, action: Action) -> Payload:
        coords = list(payload)
        coords[action.value] += 1
        return tuple(coords)

    def _base_parents(self, payload: Payload) -> List[Tuple[Payload, Action]]:
        parents = []
        for d, c in enumerate(payload):
            if c > 0:
                coords = list(payload)
                coords[d] -= 1
                parents.append((tuple(coords), Action(ActionKind.INCREMENT, d)))
        return parents

    def _is_complete(self, payload: Payload) -> bool:
        return True

    def _encode_payload(self, payload: Payload) -> np.ndarray:
        block = np.zeros((self.n_dims, self.length))
        block[np.arange(self.n_dims), list(payload)] = 1.0
        return block.ravel()

    def _payload_depth(self, payload: Payload) -> int:
        return int(sum(payload))

    @property
    def max_depth(self) -> int:
        return self.n_dims * (self.length - 1)

    def count_objects(self) -> int:
        return self.length**self.n_dims

    def object_array(self) -> np.ndarray:
        grids = np.indices((self.length,) * self.n_dims).reshape(self.n_dims, -1)
        return grids.T.astype(np.int64)

    def sample_objects(self, rng: np.random.Generator, n: int) -> List[Payload]:
        cells = rng.integers(0, self.length, size=(n, self.n_dims))
        return [tuple(int(v) for v in row) for row in cells]

    def features(self, objects: Sequence[Payload]) -> np.ndarray:
        cells = np.asarray(objects, dtype=float).reshape(-1, self.n_dims)
        return cells / max(self.length - 1, 1)

    def single_fidelity(self) -> "HyperGrid":
        return HyperGrid(
            self.length,
            self.n_dims,
            n_fidelities=self.n_fidelities,
            multi_fidelity=False,
            enumeration_cap=self.enumeration_cap,
        )

    def __repr__(self) -> str:
        return f"HyperGrid(length={self.length}, n_dims={self.n_dims}, M={self.n_fidelities}, mf={self.multi_fidelity})"


class SequenceSpace(Environment):
    """
    Fixed-length sequences over a finite vocabulary, built by appending one
    token at a time. Stop is legal only once the sequence is full.
    """

    kind = "sequence"

    def __init__(self, length: int = 8, vocabulary: str = "ACGT", **kwargs):
        if length < 1 or not vocabulary:
            raise ValueError("sequence length and vocabulary must be non-empty")
        self.length = length
        self.vocabulary = vocabulary
        super().__init__(**kwargs)

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def _base_actions(self) -> List[Action]:
        return [Action(ActionKind.APPEND, t) for t in range(self.vocab_size)]

    def _initial_payload(self) -> Payload:
        return ()

    def _base_mask(self, payload: Payload) -> np.ndarray:
        return np.full(self.vocab_size, len(payload) < self.length, dtype=bool)

    def _apply(self, payload: Payload, action: Action) -> Payload:
        return payload + (action.value,)

    def _base_parents(self, payload: Payload) -> List[Tuple[Payload, Action]]:
        if not payload:
            return []
        return [(payload[:-1], Action(ActionKind.APPEND, payload[-1]))]

    def _is_complete(self, payload: Payload) -> bool:
        return len(payload) == self.length

    def _encode_payload(self, payload: Payload) -> np.ndarray:
        pad = self.vocab_size
        block = np.zeros((self.length, self.vocab_size + 1))
        tokens = list(payload) + [pad] * (self.length - len(payload))
        block[np.arange(self.length), tokens] = 1.0
        return block.ravel()

    def _payload_depth(self, payload: Payload) -> int:
        return len(payload)

    @property
    def max_depth(self) -> int:
        return self.length

    def count_objects(self) -> int:
        return self.vocab_size**self.length

    def object_array(self) -> np.ndarray:
        rows = itertools.product(range(self.vocab_size), repeat=self.length)
        return np.array(list(rows), dtype=np.int64).reshape(-1, self.length)

    def sample_objects(self, rng: np.random.Generator, n: int) -> List[Payload]:
        tokens = rng.integers(0, self.vocab_size, size=(n, self.length))
        return [tuple(int(v) for v in row) for row in tokens]

    def features(self, objects: Sequence[Payload]) -> np.ndarray:
        tokens = np.asarray(objects, dtype=np.int64).reshape(-1, self.length)
        onehot = np.zeros((tokens.shape[0], self.length, self.vocab_size))
        rows = np.arange(tokens.shape[0])[:, None]
        onehot[rows, np.arange(self.length)[None, :], tokens] = 1.0
        return onehot.reshape(tokens.shape[0], -1)

    def to_string(self, payload: Payload) -> str:
        return "".join(self.vocabulary[t] for t in payload)

    def from_string(self, text: str) -> Payload:
        unknown = sorted(set(text) - set(self.vocabulary))
        if unknown:
            raise InvalidTokenError(f"tokens {unknown} are not in the vocabulary {self.vocabulary!r}")
        return tuple(self.vocabulary.index(ch) for ch in text)

    def single_fidelity(self) -> "SequenceSpace":
        return SequenceSpace(
            self.length,
            self.vocabulary,
            n_fidelities=self.n_fidelities,
            multi_fidelity=False,
            enumeration_cap=self.enumeration_cap,
        )

    def __repr__(self) -> str:
        return f"SequenceSpace(length={self.length}, vocabulary={self.vocabulary!r}, M={self.n_fidelities}, mf={self.multi_fidelity})"


def describe_object(env: Environment, x: Payload) -> str:
    if isinstance(env, SequenceSpace):
        return env.to_string(x)
    return "(" + ", ".join(str(c) for c in x) + ")"


def parse_object(env: Environment, text: str) -> Payload:
    """Parse a CLI object: "3,4" for grids, "ACGT..." for sequences."""
    if isinstance(env, SequenceSpace):
        return env.from_string(text.strip().upper())
    return tuple(int(part) for part in text.replace("(", "").replace(")", "").split(","))
