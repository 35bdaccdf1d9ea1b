"""
Tests for the fidelity-augmented environments
"""

import numpy as np
import pytest

from tools.environments import (
    Action,
    ActionKind,
    FidState,
    HyperGrid,
    SequenceSpace,
    describe_object,
    parse_object,
)
from tools.errors import IllegalActionError, InvalidTokenError, TooLargeError


def reachable_states(env):
    """Every non-terminal state reachable from s0, by breadth-first search."""
    seen = {env.reset()}
    frontier = [env.reset()]
    while frontier:
        state = frontier.pop()
        for action in np.flatnonzero(env.allowed_actions(state)):
            child = env.step(state, int(action))
            if not child.terminal and child not in seen:
                seen.add(child)
                frontier.append(child)
    return seen


def test_reset_is_origin_with_unset_fidelity():
    env = HyperGrid(4, 2, n_fidelities=3)
    s0 = env.reset()
    assert s0 == FidState(payload=(0, 0), fidelity=0, terminal=False)
    assert SequenceSpace(8, n_fidelities=2).reset().payload == ()


def test_initial_mask_allows_increments_and_fidelities_but_not_stop():
    env = HyperGrid(2, 2, n_fidelities=2)
    mask = env.allowed_actions(env.reset())
    assert env.actions[: env.n_base_actions] == [Action(ActionKind.INCREMENT, 0), Action(ActionKind.INCREMENT, 1)]
    assert mask.tolist() == [True, True, True, True, False]


def test_fidelity_can_be_set_only_once():
    env = HyperGrid(3, 2, n_fidelities=2)
    state = env.step(env.reset(), Action(ActionKind.SET_FIDELITY, 2))
    assert state.fidelity == 2
    with pytest.raises(IllegalActionError):
        env.step(state, Action(ActionKind.SET_FIDELITY, 1))


def test_stop_requires_a_fidelity_in_multi_fidelity_mode():
    env = HyperGrid(3, 2, n_fidelities=2)
    state = env.step(env.reset(), Action(ActionKind.INCREMENT, 0))
    with pytest.raises(IllegalActionError):
        env.step(state, env.stop_index)
    state = env.step(state, Action(ActionKind.SET_FIDELITY, 1))
    terminal = env.step(state, env.stop_index)
    assert terminal.terminal
    assert env.terminal_pair(terminal) == ((1, 0), 1)
    assert not env.allowed_actions(terminal).any()


def test_step_rejects_index_outside_alphabet():
    env = HyperGrid(3, 2, n_fidelities=2)
    with pytest.raises(IllegalActionError):
        env.step(env.reset(), env.n_actions)


def test_grid_edge_blocks_increment():
    env = HyperGrid(2, 2, n_fidelities=1)
    state = env.step(env.reset(), Action(ActionKind.INCREMENT, 0))
    with pytest.raises(IllegalActionError):
        env.step(state, Action(ActionKind.INCREMENT, 0))


def test_parents_invert_steps_everywhere():
    env = HyperGrid(3, 2, n_fidelities=2)
    for state in reachable_states(env):
        if state == env.reset():
            assert env.parents(state) == []
            continue
        for parent, action in env.parents(state):
            assert env.step(parent, action) == state
            assert env.depth(parent) == env.depth(state) - 1


def test_terminal_has_single_stop_parent():
    env = HyperGrid(3, 2, n_fidelities=2)
    terminal = FidState((2, 1), 1, terminal=True)
    assert env.parents(terminal) == [(FidState((2, 1), 1), Action(ActionKind.STOP))]
    assert env.backward_mask(terminal).sum() == 1


def test_terminal_counts_and_enumeration():
    env = HyperGrid(3, 2, n_fidelities=2)
    assert env.count_terminals() == 18
    pairs = env.enumerate_terminals()
    assert len(pairs) == len(set(pairs)) == 18
    assert {m for _, m in pairs} == {1, 2}


def test_enumeration_cap():
    env = HyperGrid(3, 2, n_fidelities=2, enumeration_cap=5)
    with pytest.raises(TooLargeError):
        env.enumerate_terminals()


def test_every_trajectory_fits_the_length_bound():
    env = HyperGrid(2, 2, n_fidelities=2)
    assert env.max_trajectory_length == 4
    for state in reachable_states(env):
        assert env.depth(state) + 1 <= env.max_trajectory_length


def test_single_fidelity_alphabet_and_terminal_fidelity():
    env = HyperGrid(3, 2, n_fidelities=3).single_fidelity()
    assert all(a.kind != ActionKind.SET_FIDELITY for a in env.actions)
    state = env.step(env.reset(), env.stop_index)
    assert env.terminal_pair(state) == ((0, 0), 3)
    assert env.count_terminals() == 9


def test_sequence_stop_only_when_full():
    env = SequenceSpace(3, "ACGT", n_fidelities=2)
    state = env.reset()
    state = env.step(state, Action(ActionKind.SET_FIDELITY, 2))
    for token in (0, 3):
        state = env.step(state, Action(ActionKind.APPEND, token))
        assert not env.allowed_actions(state)[env.stop_index]
    state = env.step(state, Action(ActionKind.APPEND, 1))
    mask = env.allowed_actions(state)
    assert mask[env.stop_index] and mask.sum() == 1
    assert env.to_string(state.payload) == "ATC"


def test_sequence_parsing():
    env = SequenceSpace(4, "ACGT")
    assert env.from_string("GATC") == (2, 0, 3, 1)
    assert parse_object(env, "gatc") == (2, 0, 3, 1)
    assert describe_object(env, (2, 0, 3, 1)) == "GATC"
    with pytest.raises(InvalidTokenError):
        env.from_string("GAXC")
    assert parse_object(HyperGrid(5, 2), "(3, 4)") == (3, 4)


def test_encoding_layout():
    env = HyperGrid(3, 2, n_fidelities=2)
    state = FidState((2, 0), 1)
    code = env.encode(state)
    assert code.shape == (env.encoding_size,) == (9,)
    assert code.tolist() == [0, 0, 1, 1, 0, 0, 0, 1, 0]
    assert env.encode_batch([state, env.reset()]).shape == (2, 9)


def test_features():
    grid = HyperGrid(5, 2)
    assert np.allclose(grid.features([(0, 4), (2, 2)]), [[0.0, 1.0], [0.5, 0.5]])
    seq = SequenceSpace(2, "ACGT")
    assert seq.features([(3, 0)]).tolist() == [[0, 0, 0, 1, 1, 0, 0, 0]]
