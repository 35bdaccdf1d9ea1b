"""
Acquisition Agent
Cost-weighted multi-fidelity max-value entropy search through the GIBBON
lower bound: alpha(x, m) = IG(f*_M; f_m(x)) / lambda_m.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import cholesky
from scipy.special import erfc

from agents.surrogate import (
    MfGpModel,
    joint_posterior,
    posterior,
    posterior_correlation,
)
from tools.environments import Environment, Payload

logger = logging.getLogger(__name__)

LOG_ARG_FLOOR = 1e-12
TAIL_SWITCH = -6.0
SAMPLE_JITTER = 1e-8


@dataclass(frozen=True)
class MaxValueSamples:
    """Sampled maxima of f_M, in the standardised units of the surrogate."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size == 0 or not np.all(np.isfinite(values)):
            raise ValueError("max-value samples must be a non-empty set of finite values")
        object.__setattr__(self, "values", values)

    @property
    def n_samples(self) -> int:
        return int(self.values.size)


@dataclass
class AcqConfig:
    n_max_value_samples: int = 10
    candidate_pool_size: int = 1000
    costs: Tuple[float, ...] = (1.0,)
    gibbon_batch_term: bool = False

    def __post_init__(self):
        if self.candidate_pool_size < 1 or self.n_max_value_samples < 1:
            raise ValueError("pool size and number of max-value samples must be >= 1")
        if any(float(c) <= 0 for c in self.costs):
            raise ValueError(f"costs must be positive, got {self.costs}")


@dataclass
class ModelView:
    """
    How the loop's (x, m) pairs reach the surrogate: environment features
    and the fidelity normalisation used when the model was fitted.
    """

    model: MfGpModel
    env: Environment
    n_model_fidelities: int
    fidelity_map: Optional[dict] = field(default=None)

    def inputs(self, candidates: Sequence[Tuple[Payload, int]]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        objects = [x for x, _ in candidates]
        ms = np.array([self.model_fidelity(m) for _, m in candidates], dtype=float)
        if self.n_model_fidelities == 1:
            m_norm = np.ones(len(ms))
        else:
            m_norm = (ms - 1.0) / (self.n_model_fidelities - 1.0)
        return self.env.features(objects), m_norm, ms.astype(int)

    def model_fidelity(self, m: int) -> int:
        if self.fidelity_map is not None:
            return self.fidelity_map[m]
        return m


# -- Gaussian tail helpers --------------------------------------------------


def normal_pdf(x: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * np.asarray(x, dtype=float) ** 2) / math.sqrt(2 * math.pi)


def normal_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def inverse_mills(gamma: np.ndarray) -> np.ndarray:
    """r(gamma) = phi(gamma) / Phi(gamma), asymptotic in the far left tail."""
    gamma = np.asarray(gamma, dtype=float)
    safe = np.where(gamma < TAIL_SWITCH, 0.0, gamma)
    direct = normal_pdf(safe) / normal_cdf(safe)
    g2 = np.where(gamma < TAIL_SWITCH, gamma, -10.0) ** 2
    asymptotic = -gamma / (1.0 - 1.0 / g2 + 3.0 / g2**2 - 15.0 / g2**3)
    return np.where(gamma < TAIL_SWITCH, asymptotic, direct)


# -- operations ------------------------------------------------------------


def sample_max_values(
    view: ModelView,
    config: AcqConfig,
    rng: np.random.Generator,
) -> MaxValueSamples:
    """
    Draw f*_M samples: for each sample, a joint posterior draw of f_M over a
    candidate pool (the whole space when it fits in the pool), keeping its max.
    """
    env = view.env
    enumerate_all = env.count_objects() <= config.candidate_pool_size
    fixed_pool: Optional[np.ndarray] = None
    fixed_chol: Optional[np.ndarray] = None
    fixed_mean: Optional[np.ndarray] = None
    if enumerate_all:
        objects = [tuple(int(v) for v in row) for row in env.object_array()]
        fixed_pool = env.features(objects)
        fixed_mean, fixed_chol = _joint_top_fidelity(view.model, fixed_pool)

    values = []
    for _ in range(config.n_max_value_samples):
        if enumerate_all:
            mean, chol = fixed_mean, fixed_chol
        else:
            pool = env.features(env.sample_objects(rng, config.candidate_pool_size))
            mean, chol = _joint_top_fidelity(view.model, pool)
        draw = mean + chol @ rng.standard_normal(len(mean))
        values.append(float(np.max(draw)))
    samples = MaxValueSamples(np.array(values))
    logger.debug("max-value samples: mean %.4f, spread %.4f", samples.values.mean(), samples.values.std())
    return samples


def _joint_top_fidelity(model: MfGpModel, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    post = posterior(model, features, 1.0, full_cov=True, standardized=True)
    cov = post.covariance
    n = len(post.mean)
    for jitter in (SAMPLE_JITTER, 1e-6, 1e-4, 1e-2):
        try:
            return post.mean, cholesky(cov + jitter * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            continue
    # independent draws as a last resort
    logger.warning("posterior covariance not factorisable; sampling marginals independently")
    return post.mean, np.diag(np.sqrt(np.maximum(np.diag(cov), 0.0)))


def gibbon_information_gain(mean, sd, rho, max_samples: MaxValueSamples) -> np.ndarray:
    """
    Pointwise GIBBON bound on I(f*_M; f_m(x)).

    IG = -1/(2S) * sum_f* log(1 - rho^2 r(g) (g + r(g))), g = (f* - mean) / sd,
    with the log argument clamped to [1e-12, 1].

    Args:
        mean: posterior mean(s) of f_M(x)
        sd: posterior standard deviation(s) of f_M(x), > 0
        rho: correlation(s) of f_m(x) and f_M(x)
        max_samples: sampled maxima, same units as mean and sd

    Returns:
        information gain per query, >= 0
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    sd = np.atleast_1d(np.asarray(sd, dtype=float))
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    gamma = (max_samples.values[None, :] - mean[:, None]) / sd[:, None]
    r = inverse_mills(gamma)
    shrink = r * (gamma + r)
    inner = np.clip(1.0 - (rho[:, None] ** 2) * shrink, LOG_ARG_FLOOR, 1.0)
    return -0.5 * np.mean(np.log(inner), axis=1)


def _cost_array(ms: np.ndarray, costs: Sequence[Union[float, Fraction]]) -> np.ndarray:
    table = np.array([float(c) for c in costs])
    return table[ms - 1]


def score_batch(
    view: ModelView,
    candidates: Sequence[Tuple[Payload, int]],
    max_samples: MaxValueSamples,
    costs: Sequence[Union[float, Fraction]],
) -> np.ndarray:
    """Cost-weighted acquisition for every (x, m) candidate, in input order."""
    if len(candidates) == 0:
        return np.zeros(0)
    X, m_norm, ms = view.inputs(candidates)
    at_m, at_top = joint_posterior(view.model, X, m_norm, standardized=True)
    rho = np.clip(
        at_m.cross_covariance / np.sqrt(at_m.variance * at_top.variance), -1.0 + 1e-9, 1.0 - 1e-9
    )
    ig = gibbon_information_gain(at_top.mean, np.sqrt(at_top.variance), rho, max_samples)
    return np.maximum(ig, 0.0) / _cost_array(ms, costs)


def mf_mes(
    view: ModelView,
    x: Payload,
    m: int,
    max_samples: MaxValueSamples,
    costs: Sequence[Union[float, Fraction]],
) -> float:
    """alpha(x, m) = IG(f*_M; f_m(x) | D) / lambda_m for a single pair."""
    X, m_norm, ms = view.inputs([(x, m)])
    rho = posterior_correlation(view.model, X, m_norm)
    top = posterior(view.model, X, 1.0, standardized=True)
    ig = gibbon_information_gain(top.mean, np.sqrt(top.variance), rho, max_samples)
    return float(max(ig[0], 0.0) / _cost_array(ms, costs)[0])


def greedy_gibbon_batch(
    view: ModelView,
    candidates: Sequence[Tuple[Payload, int]],
    max_samples: MaxValueSamples,
    costs: Sequence[Union[float, Fraction]],
    batch_size: int,
) -> List[int]:
    """
    Greedy batch selection with the GIBBON repulsion term 1/2 log|R|.

    Each pick maximises (IG_i + 1/2 log(1 - c_i^T R_B^-1 c_i)) / lambda_i, where
    R is the correlation matrix of noisy observations at the candidates and B
    the points chosen so far. Returns candidate indices in pick order.
    """
    n = len(candidates)
    if n == 0 or batch_size <= 0:
        return []
    X, m_norm, ms = view.inputs(candidates)
    base = score_batch(view, candidates, max_samples, costs) * _cost_array(ms, costs)
    post = posterior(view.model, X, m_norm, full_cov=True, standardized=True)
    noisy = post.covariance + view.model.params.noise_variance * np.eye(n)
    scale = np.sqrt(np.diag(noisy))
    corr = noisy / np.outer(scale, scale)
    lambdas = _cost_array(ms, costs)

    chosen: List[int] = []
    residual = np.ones(n)
    basis = np.zeros((0, n))
    for _ in range(min(batch_size, n)):
        repulsion = 0.5 * np.log(np.clip(residual, LOG_ARG_FLOOR, 1.0))
        utility = (base + repulsion) / lambdas
        utility[chosen] = -np.inf
        pick = int(np.argmax(utility))
        chosen.append(pick)
        # rank-one update of the conditional correlations (Cholesky of R_B)
        direction = corr[pick] - basis.T @ basis[:, pick]
        pivot = math.sqrt(max(residual[pick], LOG_ARG_FLOOR))
        row = direction / pivot
        basis = np.vstack([basis, row])
        residual = residual - row**2
    return chosen
