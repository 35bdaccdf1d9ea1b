"""
GFlowNet Agent
From-scratch GFlowNet trained with trajectory balance.

The policy is a LeakyReLU MLP with two output heads sharing one trunk:
a forward head P_F over the action alphabet and a backward head P_B over
parent actions. Gradients are back-propagated by hand and applied with Adam;
the learnable log-partition scalar log Z has its own learning rate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from tools.environments import Environment, FidState, TerminalPair, Trajectory
from tools.errors import DivergenceDetectedError, NonPositiveRewardError

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01
REWARD_FLOOR = 1e-20

RewardFn = Callable[[Sequence[TerminalPair]], np.ndarray]


@dataclass
class PolicyConfig:
    hidden_width: int = 128
    n_hidden: int = 2


@dataclass
class TrainConfig:
    n_trajectories: int = 4000
    batch_size: int = 16
    epsilon: float = 0.1
    lr: float = 1e-3
    lr_log_z: float = 0.1
    reward_exponent: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.batch_size < 1 or self.n_trajectories < 1:
            raise ValueError("batch_size and n_trajectories must be >= 1")

    @property
    def n_steps(self) -> int:
        return math.ceil(self.n_trajectories / self.batch_size)


@dataclass
class RewardTransform:
    """R(alpha) = alpha * rho^(j-1) / beta, raised to `exponent`."""

    beta: float = 1.0
    rho_anneal: float = 1.0
    round_index: int = 1
    exponent: float = 1.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.rho_anneal < 1:
            raise ValueError("rho must be >= 1")


def reward_transform(alpha, t: RewardTransform):
    """
    Turn acquisition values into strictly positive GFlowNet rewards.

    Example:
        >>> reward_transform(2.0, RewardTransform(beta=1e-5, rho_anneal=2.0, round_index=3))
        800000.0
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ValueError("acquisition values must be non-negative")
    reward = alpha * t.rho_anneal ** (t.round_index - 1) / t.beta
    reward = np.maximum(reward, REWARD_FLOOR)
    if t.exponent != 1.0:
        reward = np.maximum(reward**t.exponent, REWARD_FLOOR)
    return float(reward) if reward.ndim == 0 else reward


# -- network -------------------------------------------------------------------


def _leaky(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-softmax over legal entries; illegal entries get -inf (probability exactly 0)."""
    masked = np.where(mask, logits, -np.inf)
    top = np.max(masked, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    shifted = masked - top
    with np.errstate(divide="ignore"):
        norm = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    return shifted - norm


class PolicyNet:
    """
    MLP policy with tied trunk, forward/backward heads, log Z and Adam moments.
    """

    def __init__(
        self,
        n_inputs: int,
        n_actions: int,
        hidden_width: int = 128,
        n_hidden: int = 2,
        rng: Optional[np.random.Generator] = None,
    ):
        rng = rng or np.random.default_rng(0)
        self.n_inputs = n_inputs
        self.n_actions = n_actions
        self.hidden_width = hidden_width
        self.n_hidden = n_hidden

        self.params: Dict[str, np.ndarray] = {}
        fan_in = n_inputs
        for layer in range(n_hidden):
            bound = 1.0 / math.sqrt(fan_in)
            self.params[f"W{layer}"] = rng.uniform(-bound, bound, size=(fan_in, hidden_width))
            self.params[f"b{layer}"] = rng.uniform(-bound, bound, size=hidden_width)
            fan_in = hidden_width
        # zero heads: uniform policies at initialisation
        self.params["Wf"] = np.zeros((fan_in, n_actions))
        self.params["bf"] = np.zeros(n_actions)
        self.params["Wb"] = np.zeros((fan_in, n_actions))
        self.params["bb"] = np.zeros(n_actions)
        self.params["log_z"] = np.zeros(1)

        self.adam_m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.adam_v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.adam_t = 0

    @classmethod
    def for_environment(cls, env: Environment, config: Optional[PolicyConfig] = None, rng=None) -> "PolicyNet":
        config = config or PolicyConfig()
        return cls(env.encoding_size, env.n_actions, config.hidden_width, config.n_hidden, rng)

    @property
    def log_z(self) -> float:
        return float(self.params["log_z"][0])

    @property
    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def forward(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, list]:
        cache = []
        h = np.asarray(X, dtype=float)
        for layer in range(self.n_hidden):
            z = h @ self.params[f"W{layer}"] + self.params[f"b{layer}"]
            cache.append((h, z))
            h = _leaky(z)
        cache.append((h, None))
        forward_logits = h @ self.params["Wf"] + self.params["bf"]
        backward_logits = h @ self.params["Wb"] + self.params["bb"]
        return forward_logits, backward_logits, cache

    def backward(self, cache: list, d_forward: np.ndarray, d_backward: np.ndarray) -> Dict[str, np.ndarray]:
        h_top, _ = cache[-1]
        grads = {
            "Wf": h_top.T @ d_forward,
            "bf": d_forward.sum(axis=0),
            "Wb": h_top.T @ d_backward,
            "bb": d_backward.sum(axis=0),
        }
        dh = d_forward @ self.params["Wf"].T + d_backward @ self.params["Wb"].T
        for layer in reversed(range(self.n_hidden)):
            h_in, z = cache[layer]
            dz = dh * np.where(z > 0, 1.0, LEAKY_SLOPE)
            grads[f"W{layer}"] = h_in.T @ dz
            grads[f"b{layer}"] = dz.sum(axis=0)
            dh = dz @ self.params[f"W{layer}"].T
        return grads

    def adam_step(self, grads: Dict[str, np.ndarray], lr: float, lr_log_z: float,
                  b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8) -> None:
        self.adam_t += 1
        for name, grad in grads.items():
            self.adam_m[name] = b1 * self.adam_m[name] + (1 - b1) * grad
            self.adam_v[name] = b2 * self.adam_v[name] + (1 - b2) * grad**2
            m_hat = self.adam_m[name] / (1 - b1**self.adam_t)
            v_hat = self.adam_v[name] / (1 - b2**self.adam_t)
            rate = lr_log_z if name == "log_z" else lr
            self.params[name] = self.params[name] - rate * m_hat / (np.sqrt(v_hat) + eps)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    def to_dict(self) -> Dict:
        names = sorted(self.params)
        return {
            "n_inputs": self.n_inputs,
            "n_actions": self.n_actions,
            "hidden_width": self.hidden_width,
            "n_hidden": self.n_hidden,
            "names": names,
            "shapes": [list(self.params[n].shape) for n in names],
            "vector": np.concatenate([self.params[n].ravel() for n in names]),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "PolicyNet":
        net = cls(int(data["n_inputs"]), int(data["n_actions"]), int(data["hidden_width"]), int(data["n_hidden"]))
        vector = np.asarray(data["vector"], dtype=float)
        offset = 0
        for name, shape in zip(data["names"], data["shapes"]):
            size = int(np.prod(shape)) if shape else 1
            net.params[str(name)] = vector[offset : offset + size].reshape(shape)
            offset += size
        if offset != vector.size:
            raise ValueError(f"snapshot vector has {vector.size} values, layers need {offset}")
        return net


# -- policy queries ---------------------------------------------------------


def forward_logprobs(net: PolicyNet, env: Environment, state: FidState) -> np.ndarray:
    """Masked forward log-probabilities over the whole action alphabet."""
    if state.terminal:
        raise ValueError("terminal states have no outgoing actions")
    logits, _, _ = net.forward(env.encode(state)[None, :])
    return masked_log_softmax(logits, env.allowed_actions(state)[None, :])[0]


def sample_trajectories(
    net: PolicyNet,
    env: Environment,
    n: int,
    epsilon: float,
    rng: np.random.Generator,
    greedy: bool = False,
) -> List[Trajectory]:
    """
    Roll out `n` trajectories in lock-step. With probability epsilon a step
    is uniform over legal actions, otherwise it follows P_F. Log-probabilities
    are recorded under the policy (not the exploration mixture).
    """
    trajectories = [Trajectory(states=[env.reset()]) for _ in range(n)]
    active = list(range(n))
    while active:
        states = [trajectories[i].states[-1] for i in active]
        masks = np.stack([env.allowed_actions(s) for s in states])
        logits, _, _ = net.forward(env.encode_batch(states))
        logp = masked_log_softmax(logits, masks)
        still_active = []
        for row, i in enumerate(active):
            if greedy:
                action = int(np.argmax(logp[row]))
            elif epsilon > 0 and rng.random() < epsilon:
                action = int(rng.choice(np.flatnonzero(masks[row])))
            else:
                probs = np.exp(logp[row])
                action = int(rng.choice(env.n_actions, p=probs / probs.sum()))
            trajectory = trajectories[i]
            next_state = env.step(trajectory.states[-1], action)
            trajectory.states.append(next_state)
            trajectory.actions.append(env.actions[action])
            trajectory.log_pf.append(float(logp[row, action]))
            if not next_state.terminal:
                still_active.append(i)
        active = still_active
    _record_backward(net, env, trajectories)
    return trajectories


def sample_trajectory(net: PolicyNet, env: Environment, epsilon: float, rng: np.random.Generator,
                      greedy: bool = False) -> Trajectory:
    return sample_trajectories(net, env, 1, epsilon, rng, greedy)[0]


def _record_backward(net: PolicyNet, env: Environment, trajectories: Sequence[Trajectory]) -> None:
    rows, targets = [], []
    for k, trajectory in enumerate(trajectories):
        trajectory.log_pb = [0.0] * len(trajectory.actions)
        for t in range(len(trajectory.actions) - 1):
            rows.append(trajectory.states[t + 1])
            targets.append((k, t, env.action_index(trajectory.actions[t])))
    if not rows:
        return
    _, logits, _ = net.forward(env.encode_batch(rows))
    masks = np.stack([env.backward_mask(s) for s in rows])
    logp = masked_log_softmax(logits, masks)
    for row, (k, t, action) in enumerate(targets):
        trajectories[k].log_pb[t] = float(logp[row, action])


def tb_loss_batch(
    net: PolicyNet,
    env: Environment,
    trajectories: Sequence[Trajectory],
    log_rewards: np.ndarray,
) -> Tuple[float, Dict[str, np.ndarray], np.ndarray]:
    """
    Mean trajectory-balance loss over a minibatch and its parameter gradients.

    delta = log Z + sum log P_F - log R(x) - sum log P_B; loss = mean(delta^2).
    The Stop transition has a deterministic backward step and contributes 0.
    """
    log_rewards = np.asarray(log_rewards, dtype=float)
    states, owner, forward_actions, backward_actions = [], [], [], []
    for k, trajectory in enumerate(trajectories):
        for t, action in enumerate(trajectory.actions):
            states.append(trajectory.states[t])
            owner.append(k)
            forward_actions.append(env.action_index(action))
            backward_actions.append(env.action_index(trajectory.actions[t - 1]) if t > 0 else -1)
    owner = np.array(owner)
    forward_actions = np.array(forward_actions)
    backward_actions = np.array(backward_actions)
    n_rows = len(states)
    rows = np.arange(n_rows)

    forward_mask = np.stack([env.allowed_actions(s) for s in states])
    logits_f, logits_b, cache = net.forward(env.encode_batch(states))
    logp_f = masked_log_softmax(logits_f, forward_mask)

    has_parent = backward_actions >= 0
    backward_mask = np.zeros_like(forward_mask)
    for r in np.flatnonzero(has_parent):
        backward_mask[r] = env.backward_mask(states[r])
    backward_mask[~has_parent] = True
    logp_b = masked_log_softmax(logits_b, backward_mask)

    n_traj = len(trajectories)
    sum_f = np.bincount(owner, weights=logp_f[rows, forward_actions], minlength=n_traj)
    picked_b = np.where(has_parent, logp_b[rows, np.maximum(backward_actions, 0)], 0.0)
    sum_b = np.bincount(owner, weights=picked_b, minlength=n_traj)

    residual = net.log_z + sum_f - log_rewards - sum_b
    loss = float(np.mean(residual**2))
    coef = 2.0 * residual / n_traj

    d_forward = -np.exp(logp_f)
    d_forward[rows, forward_actions] += 1.0
    d_forward *= coef[owner][:, None]

    d_backward = -np.exp(logp_b)
    d_backward[rows, np.maximum(backward_actions, 0)] += 1.0
    d_backward *= -coef[owner][:, None]
    d_backward[~has_parent] = 0.0

    grads = net.backward(cache, d_forward, d_backward)
    grads["log_z"] = np.array([coef.sum()])
    return loss, grads, residual


def tb_loss(net: PolicyNet, env: Environment, trajectory: Trajectory, reward: float) -> Tuple[float, Dict[str, np.ndarray]]:
    """Trajectory-balance loss of a single trajectory and its gradients."""
    if not reward > 0:
        raise NonPositiveRewardError(f"reward must be positive, got {reward}")
    loss, grads, _ = tb_loss_batch(net, env, [trajectory], np.array([math.log(reward)]))
    return loss, grads


def train(
    net: PolicyNet,
    env: Environment,
    reward_fn: RewardFn,
    config: TrainConfig,
    rng: np.random.Generator,
) -> Tuple[PolicyNet, List[float]]:
    """
    Train the GFlowNet on freshly sampled minibatches with Adam.

    Args:
        net: policy to update in place
        env: environment the trajectories live in
        reward_fn: maps terminal (x, m) pairs to strictly positive rewards
        config: trajectory budget, minibatch size, exploration and learning rates
        rng: sampling generator

    Returns:
        the trained net and the per-step loss trace
    """
    trace: List[float] = []
    for step in range(config.n_steps):
        trajectories = sample_trajectories(net, env, config.batch_size, config.epsilon, rng)
        pairs = [env.terminal_pair(t.terminal) for t in trajectories]
        rewards = np.asarray(reward_fn(pairs), dtype=float)
        if np.any(~(rewards > 0)):
            raise NonPositiveRewardError(f"reward function returned {rewards.min()} at step {step}")
        log_rewards = config.reward_exponent * np.log(rewards)
        loss, grads, _ = tb_loss_batch(net, env, trajectories, log_rewards)
        if not math.isfinite(loss):
            raise DivergenceDetectedError(f"trajectory-balance loss became {loss} at step {step}")
        net.adam_step(grads, config.lr, config.lr_log_z)
        if not net.is_finite():
            raise DivergenceDetectedError(f"non-finite parameters after step {step}")
        trace.append(loss)
        if step % 200 == 0:
            logger.debug("step %d: loss %.4f, log Z %.3f", step, loss, net.log_z)
    return net, trace


def sample_terminals(net: PolicyNet, env: Environment, n: int, rng: np.random.Generator,
                     epsilon: float = 0.0) -> List[TerminalPair]:
    """Draw `n` terminal (x, m) pairs from the trained policy."""
    trajectories = sample_trajectories(net, env, n, epsilon, rng)
    return [env.terminal_pair(t.terminal) for t in trajectories]


def terminal_distribution(net: PolicyNet, env: Environment) -> Dict[TerminalPair, float]:
    """
    Exact on-policy probability of every terminal pair, by sweeping the
    trajectory DAG level by level (every action adds one to the depth).
    """
    distribution: Dict[TerminalPair, float] = {}
    level: Dict[FidState, float] = {env.reset(): 1.0}
    while level:
        states = list(level)
        masks = np.stack([env.allowed_actions(s) for s in states])
        logits, _, _ = net.forward(env.encode_batch(states))
        probs = np.exp(masked_log_softmax(logits, masks))
        following: Dict[FidState, float] = {}
        for row, state in enumerate(states):
            mass = level[state]
            for action in np.flatnonzero(masks[row]):
                child = env.step(state, int(action))
                flow = mass * probs[row, action]
                if child.terminal:
                    pair = env.terminal_pair(child)
                    distribution[pair] = distribution.get(pair, 0.0) + flow
                else:
                    following[child] = following.get(child, 0.0) + flow
        level = following
    return distribution
