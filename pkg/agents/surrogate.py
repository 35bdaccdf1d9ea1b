"""
Surrogate Agent
Exact multi-fidelity Gaussian-process regression over (x, m) pairs.

K((x1, m1), (x2, m2)) = K1(x1, x2) * K2(m1, m2), with K1 a stationary ARD
kernel (squared exponential or Matern-5/2) and K2 the linear downsampling
kernel c + (1 - m1)^(1+delta) (1 - m2)^(1+delta) on normalised fidelities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from tools.errors import NumericalFailure

logger = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
VARIANCE_FLOOR = 1e-12
KERNELS = ("rbf", "matern52")

# log-space box for ML-II; keeps the Gram matrix factorisable
LOG_BOUNDS = {
    "lengthscale": (math.log(1e-2), math.log(1e2)),
    "signal_variance": (math.log(1e-2), math.log(1e2)),
    "c": (math.log(1e-4), math.log(1e4)),
    "delta": (math.log(1e-3), math.log(10.0)),
    "noise_variance": (math.log(1e-6), math.log(1.0)),
}


def fidelity_norm(m, n_fidelities: int) -> np.ndarray:
    """Map fidelity indices 1..M onto [0, 1]; M = 1 maps to 1."""
    m = np.asarray(m, dtype=float)
    if n_fidelities == 1:
        return np.ones_like(m)
    return (m - 1.0) / (n_fidelities - 1.0)


@dataclass
class MfKernelParams:
    log_lengthscales: np.ndarray
    log_signal_variance: float = 0.0
    log_c: float = math.log(0.5)
    log_delta: float = math.log(0.5)
    log_noise_variance: float = math.log(1e-3)

    @classmethod
    def create(
        cls,
        n_dims: int,
        lengthscale: float = 0.5,
        signal_variance: float = 1.0,
        c: float = 0.5,
        delta: float = 0.5,
        noise_variance: float = 1e-3,
    ) -> "MfKernelParams":
        values = [lengthscale, signal_variance, c, delta, noise_variance]
        if any(v <= 0 for v in values):
            raise ValueError(f"kernel hyperparameters must be positive, got {values}")
        return cls(
            log_lengthscales=np.full(n_dims, math.log(lengthscale)),
            log_signal_variance=math.log(signal_variance),
            log_c=math.log(c),
            log_delta=math.log(delta),
            log_noise_variance=math.log(noise_variance),
        )

    @property
    def n_dims(self) -> int:
        return len(self.log_lengthscales)

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def signal_variance(self) -> float:
        return math.exp(self.log_signal_variance)

    @property
    def c(self) -> float:
        return math.exp(self.log_c)

    @property
    def delta(self) -> float:
        return math.exp(self.log_delta)

    @property
    def noise_variance(self) -> float:
        return math.exp(self.log_noise_variance)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.log_lengthscales,
                [self.log_signal_variance, self.log_c, self.log_delta, self.log_noise_variance],
            ]
        )

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "MfKernelParams":
        vector = np.asarray(vector, dtype=float)
        return cls(
            log_lengthscales=vector[:-4].copy(),
            log_signal_variance=float(vector[-4]),
            log_c=float(vector[-3]),
            log_delta=float(vector[-2]),
            log_noise_variance=float(vector[-1]),
        )

    def clipped(self) -> "MfKernelParams":
        lo = np.array([LOG_BOUNDS["lengthscale"][0]] * self.n_dims
                      + [LOG_BOUNDS[k][0] for k in ("signal_variance", "c", "delta", "noise_variance")])
        hi = np.array([LOG_BOUNDS["lengthscale"][1]] * self.n_dims
                      + [LOG_BOUNDS[k][1] for k in ("signal_variance", "c", "delta", "noise_variance")])
        return MfKernelParams.from_vector(np.clip(self.to_vector(), lo, hi))

    def to_dict(self) -> Dict:
        return {
            "lengthscales": self.lengthscales.tolist(),
            "signal_variance": self.signal_variance,
            "c": self.c,
            "delta": self.delta,
            "noise_variance": self.noise_variance,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "MfKernelParams":
        return cls(
            log_lengthscales=np.log(np.asarray(data["lengthscales"], dtype=float)),
            log_signal_variance=math.log(data["signal_variance"]),
            log_c=math.log(data["c"]),
            log_delta=math.log(data["delta"]),
            log_noise_variance=math.log(data["noise_variance"]),
        )


# -- kernel ------------------------------------------------------------------


def _fidelity_factor(m_norm: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(1.0 - np.asarray(m_norm, dtype=float), 0.0, None) ** (1.0 + delta)


def _log_one_minus(m_norm: np.ndarray) -> np.ndarray:
    base = np.clip(1.0 - np.asarray(m_norm, dtype=float), 0.0, None)
    with np.errstate(divide="ignore"):
        return np.where(base > 0, np.log(np.where(base > 0, base, 1.0)), 0.0)


def _scaled_sq_dists(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Per-dimension (x1 - x2)^2 / l^2, shape (n1, n2, d)."""
    diff = (X1[:, None, :] - X2[None, :, :]) / lengthscales
    return diff**2


def _stationary(sq: np.ndarray, signal_variance: float, kind: str) -> Tuple[np.ndarray, np.ndarray]:
    """K1 and the factor f such that dK1/dlog l_d = f * sq_d."""
    r2 = np.sum(sq, axis=-1)
    if kind == "rbf":
        k1 = signal_variance * np.exp(-0.5 * r2)
        return k1, k1
    if kind == "matern52":
        r = np.sqrt(np.maximum(r2, 0.0))
        s5r = math.sqrt(5.0) * r
        decay = np.exp(-s5r)
        k1 = signal_variance * (1.0 + s5r + 5.0 * r2 / 3.0) * decay
        return k1, signal_variance * (5.0 / 3.0) * (1.0 + s5r) * decay
    raise ValueError(f"unknown kernel {kind!r}; expected one of {KERNELS}")


def kernel_matrix(
    X1: np.ndarray,
    m1: np.ndarray,
    X2: np.ndarray,
    m2: np.ndarray,
    params: MfKernelParams,
    kind: str = "rbf",
) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    k1, _ = _stationary(_scaled_sq_dists(X1, X2, params.lengthscales), params.signal_variance, kind)
    g1 = _fidelity_factor(m1, params.delta)
    g2 = _fidelity_factor(m2, params.delta)
    return k1 * (params.c + np.outer(g1, g2))


def kernel(z1: Tuple[np.ndarray, float], z2: Tuple[np.ndarray, float], params: MfKernelParams, kind: str = "rbf") -> float:
    """K(z1, z2) for single (x, m_norm) pairs."""
    for _, m in (z1, z2):
        if not 0.0 <= m <= 1.0:
            raise ValueError(f"normalised fidelity must lie in [0, 1], got {m}")
    value = kernel_matrix(
        np.atleast_2d(z1[0]), np.array([z1[1]]), np.atleast_2d(z2[0]), np.array([z2[1]]), params, kind
    )
    return float(value[0, 0])


def _gram_and_grads(X: np.ndarray, m: np.ndarray, params: MfKernelParams, kind: str) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Noisy Gram matrix and its derivatives in the order of `to_vector`."""
    sq = _scaled_sq_dists(X, X, params.lengthscales)
    k1, dfactor = _stationary(sq, params.signal_variance, kind)
    g = _fidelity_factor(m, params.delta)
    gg = np.outer(g, g)
    k2 = params.c + gg
    K = k1 * k2

    grads = [dfactor * sq[:, :, d] * k2 for d in range(params.n_dims)]
    grads.append(K.copy())
    grads.append(k1 * params.c)
    logs = _log_one_minus(m)
    grads.append(k1 * params.delta * gg * (logs[:, None] + logs[None, :]))
    n = len(m)
    grads.append(params.noise_variance * np.eye(n))
    return K + params.noise_variance * np.eye(n), grads


def _cholesky(K: np.ndarray) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor with additive jitter escalation."""
    if not np.all(np.isfinite(K)):
        raise NumericalFailure("Gram matrix contains non-finite entries")
    n = K.shape[0]
    for jitter in JITTER_LADDER:
        try:
            chol = cholesky(K + jitter * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            continue
        if jitter > 0:
            logger.warning("Cholesky needed jitter %.0e", jitter)
        return chol, jitter
    raise NumericalFailure(f"Cholesky failed with jitter up to {JITTER_LADDER[-1]:.0e}")


# -- model -----------------------------------------------------------------


@dataclass
class SurrogateConfig:
    kernel: str = "rbf"
    n_steps: int = 200
    learning_rate: float = 0.05
    restarts: int = 2
    optimize: bool = True
    lengthscale: float = 0.5
    signal_variance: float = 1.0
    c: float = 0.5
    delta: float = 0.5
    noise_variance: float = 1e-3


@dataclass
class Posterior:
    mean: np.ndarray
    variance: np.ndarray
    covariance: Optional[np.ndarray] = None
    cross_covariance: Optional[np.ndarray] = None


@dataclass
class MfGpModel:
    params: MfKernelParams
    kind: str
    train_x: np.ndarray
    train_m: np.ndarray
    train_y: np.ndarray  # standardised
    y_mean: float
    y_std: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    log_likelihood: Optional[float] = None
    history: List[float] = field(default_factory=list)

    @property
    def n_train(self) -> int:
        return len(self.train_y)

    def standardize(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def to_dict(self) -> Dict:
        return {
            "kernel": self.kind,
            "params": self.params.to_dict(),
            "train_x": self.train_x.tolist(),
            "train_m": self.train_m.tolist(),
            "train_y": (self.train_y * self.y_std + self.y_mean).tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "MfGpModel":
        params = MfKernelParams.from_dict(data["params"])
        x = np.asarray(data["train_x"], dtype=float).reshape(-1, params.n_dims)
        return condition(params, x, np.asarray(data["train_m"], dtype=float),
                         np.asarray(data["train_y"], dtype=float), data.get("kernel", "rbf"))


def condition(
    params: MfKernelParams,
    X: np.ndarray,
    m_norm: np.ndarray,
    y: np.ndarray,
    kind: str = "rbf",
    standardize: bool = True,
) -> MfGpModel:
    """Condition the GP on (X, m_norm, y) with fixed hyperparameters; n = 0 gives the prior."""
    X = np.asarray(X, dtype=float).reshape(-1, params.n_dims)
    m_norm = np.asarray(m_norm, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if np.any(m_norm < 0) or np.any(m_norm > 1):
        raise ValueError("normalised fidelities must lie in [0, 1]")

    y_mean, y_std = 0.0, 1.0
    if standardize and len(y) > 0:
        y_mean = float(np.mean(y))
        spread = float(np.std(y))
        y_std = spread if len(y) > 1 and spread > 1e-12 else 1.0
    ys = (y - y_mean) / y_std

    if len(y) == 0:
        return MfGpModel(params, kind, X, m_norm, ys, y_mean, y_std, np.zeros((0, 0)), np.zeros(0))

    K, _ = _gram_and_grads(X, m_norm, params, kind)
    chol, jitter = _cholesky(K)
    alpha = cho_solve((chol, True), ys)
    return MfGpModel(params, kind, X, m_norm, ys, y_mean, y_std, chol, alpha, jitter)


def log_marginal_likelihood(
    params: MfKernelParams, X: np.ndarray, m_norm: np.ndarray, y: np.ndarray, kind: str = "rbf"
) -> Tuple[float, np.ndarray]:
    """
    Log marginal likelihood of (already standardised) targets and its gradient
    with respect to the log-space parameter vector.
    """
    K, grads = _gram_and_grads(X, m_norm, params, kind)
    chol, _ = _cholesky(K)
    alpha = cho_solve((chol, True), y)
    n = len(y)
    value = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(chol)))) - 0.5 * n * math.log(2 * math.pi)
    K_inv = cho_solve((chol, True), np.eye(n))
    W = np.outer(alpha, alpha) - K_inv
    gradient = np.array([0.5 * float(np.sum(W * dK)) for dK in grads])
    return value, gradient


def _ascend(start: MfKernelParams, X, m_norm, y, config: SurrogateConfig) -> Tuple[MfKernelParams, float, List[float]]:
    theta = start.clipped().to_vector()
    first = np.zeros_like(theta)
    second = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    best_theta, best_value = theta.copy(), -np.inf
    history: List[float] = []
    for t in range(1, config.n_steps + 1):
        params = MfKernelParams.from_vector(theta)
        try:
            value, gradient = log_marginal_likelihood(params, X, m_norm, y, config.kernel)
        except NumericalFailure:
            logger.debug("restart stopped at step %d on a singular Gram matrix", t)
            break
        history.append(value)
        if value > best_value:
            best_theta, best_value = theta.copy(), value
        first = b1 * first + (1 - b1) * gradient
        second = b2 * second + (1 - b2) * gradient**2
        step = config.learning_rate * (first / (1 - b1**t)) / (np.sqrt(second / (1 - b2**t)) + eps)
        theta = MfKernelParams.from_vector(theta + step).clipped().to_vector()
    return MfKernelParams.from_vector(best_theta), best_value, history


def fit(
    X: np.ndarray,
    m_norm: np.ndarray,
    y: np.ndarray,
    config: Optional[SurrogateConfig] = None,
    seed: int = 0,
) -> MfGpModel:
    """
    Fit the multi-fidelity GP: standardise targets, maximise the log marginal
    likelihood with Adam in log space (with restarts), then factorise.

    Args:
        X: surrogate features, shape (n, d)
        m_norm: normalised fidelities in [0, 1], shape (n,)
        y: targets oriented so that larger is better, shape (n,)
        config: kernel choice and optimisation budget
        seed: seeds the perturbed restarts

    Returns:
        fitted MfGpModel
    """
    config = config or SurrogateConfig()
    X = np.asarray(X, dtype=float)
    X = X.reshape(len(X), -1)
    if len(X) < 1:
        raise ValueError("fit needs at least one annotation")
    start = MfKernelParams.create(
        X.shape[1], config.lengthscale, config.signal_variance, config.c, config.delta, config.noise_variance
    )
    prior = condition(start, X, m_norm, y, config.kernel)
    if not config.optimize:
        return prior

    rng = np.random.default_rng(seed)
    best_params, best_value, best_history = start, -np.inf, []
    for restart in range(max(config.restarts, 1)):
        init = start
        if restart > 0:
            init = MfKernelParams.from_vector(start.to_vector() + rng.normal(0.0, 0.5, size=len(start.to_vector())))
        params, value, history = _ascend(init, prior.train_x, prior.train_m, prior.train_y, config)
        logger.debug("restart %d: log marginal likelihood %.4f", restart, value)
        if value > best_value:
            best_params, best_value, best_history = params, value, history

    if not np.isfinite(best_value):
        raise NumericalFailure("no restart produced a finite marginal likelihood")
    model = condition(best_params, X, m_norm, y, config.kernel)
    model.log_likelihood = best_value
    model.history = best_history
    return model


# -- prediction --------------------------------------------------------------


def _project(model: MfGpModel, X: np.ndarray, m_norm: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Cross-kernel to the training set and its triangular solve."""
    k = kernel_matrix(X, m_norm, model.train_x, model.train_m, model.params, model.kind)
    if model.n_train == 0:
        return k, np.zeros((0, len(X)))
    v = solve_triangular(model.chol, k.T, lower=True)
    return k, v


def _prior_diag(model: MfGpModel, m_norm: np.ndarray) -> np.ndarray:
    g = _fidelity_factor(m_norm, model.params.delta)
    return model.params.signal_variance * (model.params.c + g**2)


def posterior(
    model: MfGpModel,
    X: np.ndarray,
    m_norm,
    full_cov: bool = False,
    standardized: bool = False,
) -> Posterior:
    """
    Latent posterior of f at the query pairs.

    Means and variances are in target units unless `standardized` is set,
    in which case they stay in the units the model was fitted in.
    """
    X = np.asarray(X, dtype=float).reshape(-1, model.params.n_dims)
    m_norm = np.broadcast_to(np.asarray(m_norm, dtype=float), (len(X),)).copy()
    k, v = _project(model, X, m_norm)
    mean = k @ model.alpha if model.n_train else np.zeros(len(X))
    variance = np.maximum(_prior_diag(model, m_norm) - np.sum(v**2, axis=0), VARIANCE_FLOOR)
    covariance = None
    if full_cov:
        covariance = kernel_matrix(X, m_norm, X, m_norm, model.params, model.kind) - v.T @ v
        covariance = 0.5 * (covariance + covariance.T)
    if not standardized:
        mean = model.y_mean + model.y_std * mean
        variance = variance * model.y_std**2
        if covariance is not None:
            covariance = covariance * model.y_std**2
    return Posterior(mean=mean, variance=variance, covariance=covariance)


def joint_posterior(model: MfGpModel, X: np.ndarray, m_norm, standardized: bool = True) -> Tuple[Posterior, Posterior]:
    """
    Posteriors at (x, m) and at (x, 1) with their pointwise cross-covariance,
    stored on the first result.
    """
    X = np.asarray(X, dtype=float).reshape(-1, model.params.n_dims)
    m_norm = np.broadcast_to(np.asarray(m_norm, dtype=float), (len(X),)).copy()
    top = np.ones(len(X))
    k_m, v_m = _project(model, X, m_norm)
    k_t, v_t = _project(model, X, top)
    p = model.params
    g_m = _fidelity_factor(m_norm, p.delta)
    g_t = _fidelity_factor(top, p.delta)
    var_m = np.maximum(_prior_diag(model, m_norm) - np.sum(v_m**2, axis=0), VARIANCE_FLOOR)
    var_t = np.maximum(_prior_diag(model, top) - np.sum(v_t**2, axis=0), VARIANCE_FLOOR)
    cross = p.signal_variance * (p.c + g_m * g_t) - np.sum(v_m * v_t, axis=0)
    mean_m = k_m @ model.alpha if model.n_train else np.zeros(len(X))
    mean_t = k_t @ model.alpha if model.n_train else np.zeros(len(X))
    scale = 1.0 if standardized else model.y_std
    shift = 0.0 if standardized else model.y_mean
    at_m = Posterior(shift + scale * mean_m, var_m * scale**2, cross_covariance=cross * scale**2)
    at_top = Posterior(shift + scale * mean_t, var_t * scale**2)
    return at_m, at_top


def posterior_correlation(model: MfGpModel, X: np.ndarray, m_norm) -> np.ndarray:
    """Correlation of f_m(x) and f_M(x) under the posterior, clamped inside (-1, 1)."""
    at_m, at_top = joint_posterior(model, X, m_norm, standardized=True)
    rho = at_m.cross_covariance / np.sqrt(at_m.variance * at_top.variance)
    return np.clip(rho, -1.0 + 1e-9, 1.0 - 1e-9)
