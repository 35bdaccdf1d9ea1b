"""
Orchestrator Agent
Runs the multi-fidelity active-learning loop.

Each round: fit the surrogate on the dataset, train the sampler on the
transformed acquisition, propose N candidate (x, m) pairs, keep the best B
new ones, query the oracles and charge the budget ledger.
"""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_none

from agents.acquisition import (
    AcqConfig,
    MaxValueSamples,
    ModelView,
    greedy_gibbon_batch,
    sample_max_values,
    score_batch,
)
from agents.gflownet import PolicyConfig, RewardTransform, TrainConfig, reward_transform
from agents.samplers import Sampler, SamplerKind, create_sampler
from agents.surrogate import MfGpModel, SurrogateConfig, fidelity_norm, fit
from sessions.config import ExperimentConfig
from sessions.run_store import RunStore, write_table
from tools.environments import Environment, Payload, TerminalPair, describe_object
from tools.errors import (
    BudgetError,
    ConfigError,
    DomainError,
    DuplicateQueryError,
    NumericalFailure,
    StalledError,
)
from tools.metrics import ScoredItem, budget_to_threshold, mean_topk, summarize
from tools.oracles import Annotation, OracleSet, as_cost, evaluate_batch, make_environment, make_oracle_set

logger = logging.getLogger(__name__)

ROUND_ATTEMPTS = 3


# -- dataset and ledger ------------------------------------------------------


@dataclass(frozen=True)
class DatasetRecord:
    x: Payload
    y: float
    m: int
    round: int
    cost: Fraction


class AnnotatedDataset:
    """Annotations (x, y, m) in acquisition order; each (x, m) appears once."""

    def __init__(self, n_fidelities: int):
        self.n_fidelities = n_fidelities
        self.records: List[DatasetRecord] = []
        self._index: Dict[TerminalPair, int] = {}

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, pair: TerminalPair) -> bool:
        return (tuple(pair[0]), int(pair[1])) in self._index

    def add(self, annotation: Annotation, round_index: int) -> None:
        key = (tuple(annotation.x), int(annotation.m))
        if not 1 <= key[1] <= self.n_fidelities:
            raise DomainError(f"fidelity {key[1]} outside 1..{self.n_fidelities}")
        if key in self._index:
            raise DuplicateQueryError(f"{key} is already annotated")
        self._index[key] = len(self.records)
        self.records.append(DatasetRecord(key[0], float(annotation.y), key[1], round_index, annotation.cost))

    def extend(self, annotations: Sequence[Annotation], round_index: int) -> None:
        for annotation in annotations:
            self.add(annotation, round_index)

    def arrays(self) -> Tuple[List[Payload], np.ndarray, np.ndarray]:
        objects = [r.x for r in self.records]
        return objects, np.array([r.y for r in self.records]), np.array([r.m for r in self.records], dtype=int)

    def distinct_objects(self) -> List[Payload]:
        return list(dict.fromkeys(r.x for r in self.records))

    def fidelity_counts(self, round_index: Optional[int] = None) -> Dict[int, int]:
        counts = {m: 0 for m in range(1, self.n_fidelities + 1)}
        for r in self.records:
            if round_index is None or r.round == round_index:
                counts[r.m] += 1
        return counts

    @property
    def total_cost(self) -> Fraction:
        return sum((r.cost for r in self.records), Fraction(0))

    def to_dict(self) -> Dict:
        return {
            "n_fidelities": self.n_fidelities,
            "annotations": [
                {"x": list(r.x), "y": r.y, "m": r.m, "round": r.round, "cost": str(r.cost)} for r in self.records
            ],
        }


@dataclass
class BudgetLedger:
    """Exact spend accounting; the initial dataset is tracked apart from active spend."""

    cap: Fraction
    count_init_budget: bool = False
    initial_spend: Fraction = Fraction(0)
    spent: Fraction = Fraction(0)
    history: List[Fraction] = field(default_factory=list)

    def charge_initial(self, cost: Fraction) -> None:
        self.initial_spend += Fraction(cost)

    def charge(self, cost: Fraction) -> None:
        cost = Fraction(cost)
        if cost < 0:
            raise BudgetError(f"cannot charge a negative cost {cost}")
        self.spent += cost
        self.history.append(cost)

    @property
    def budget_used(self) -> Fraction:
        return self.spent + self.initial_spend if self.count_init_budget else self.spent

    @property
    def total(self) -> Fraction:
        return self.spent + self.initial_spend

    @property
    def exhausted(self) -> bool:
        return self.budget_used >= self.cap


def _unique_objects(env: Environment, count: int, rng: np.random.Generator) -> List[Payload]:
    if count > env.count_objects():
        raise ValueError(f"cannot draw {count} distinct objects from {env.count_objects()}")
    chosen: Dict[Payload, None] = {}
    while len(chosen) < count:
        for x in env.sample_objects(rng, count - len(chosen)):
            chosen.setdefault(x, None)
            if len(chosen) == count:
                break
    return list(chosen)


def init_dataset(oracle_set: OracleSet, env: Environment, counts: Sequence[int], seed: int) -> AnnotatedDataset:
    """
    Annotate uniformly random distinct objects with the given number of
    queries per fidelity (counts[m - 1] for fidelity m).

    Example:
        >>> init_dataset(branin_set, grid, [20, 20, 2], seed=0).total_cost
        Fraction(21, 5)
    """
    if len(counts) != oracle_set.n_fidelities:
        raise ValueError(f"expected {oracle_set.n_fidelities} counts, got {len(counts)}")
    if any(c < 0 for c in counts):
        raise ValueError("initial counts must be >= 0")
    rng = np.random.default_rng(seed)
    dataset = AnnotatedDataset(oracle_set.n_fidelities)
    for m, count in enumerate(counts, start=1):
        queries = [(x, m) for x in _unique_objects(env, int(count), rng)]
        annotations, _ = evaluate_batch(oracle_set, queries)
        dataset.extend(annotations, round_index=0)
    return dataset


# -- rounds ------------------------------------------------------------------


@dataclass
class RoundReport:
    round: int
    spent: Fraction
    mean_topk: float
    diversity: float
    diverse_topk: float
    proposal_topk: Optional[float] = None
    round_cost: Fraction = Fraction(0)
    n_queries: int = 0
    fidelity_counts: Dict[int, int] = field(default_factory=dict)
    f_star_mean: Optional[float] = None
    final_loss: Optional[float] = None

    def to_row(self) -> Dict[str, object]:
        return {
            "round": self.round,
            "spent": self.spent,
            "mean_topK": self.mean_topk,
            "diversity": self.diversity,
            "diverse_topK": self.diverse_topk,
            "proposal_topK": self.proposal_topk,
            "round_cost": self.round_cost,
            "spent_exact": str(self.spent),
            "n_queries": self.n_queries,
            "fidelity_counts": "/".join(str(self.fidelity_counts[m]) for m in sorted(self.fidelity_counts)),
            "f_star_mean": self.f_star_mean,
            "final_loss": self.final_loss,
        }


@dataclass
class LoopState:
    config: ExperimentConfig
    env: Environment
    oracle_set: OracleSet
    sampler: Sampler
    dataset: AnnotatedDataset
    ledger: BudgetLedger
    round_index: int = 0
    attempt: int = 1
    model: Optional[MfGpModel] = None

    @property
    def kind(self) -> SamplerKind:
        return self.sampler.kind


def create_loop_state(config: ExperimentConfig) -> LoopState:
    """Build environment, oracles, sampler, initial dataset and ledger from a resolved config."""
    env = make_environment(config.task.name)
    oracle_set = make_oracle_set(config.task.name, env, config.budget.costs)
    sampler = create_sampler(
        config.task.sampler,
        env,
        PolicyConfig(config.policy.hidden_width, config.policy.n_hidden),
        TrainConfig(
            n_trajectories=config.training.n_trajectories,
            batch_size=config.training.batch_size,
            epsilon=config.training.epsilon,
            lr=config.training.lr,
            lr_log_z=config.training.lr_log_z,
            reward_exponent=config.training.reward_exponent,
        ),
        reinit_each_round=config.training.reinit_each_round,
    )
    dataset = init_dataset(oracle_set, env, config.initial_counts(), config.seed)
    cap = Fraction(str(config.budget.gamma)) * oracle_set.cost(oracle_set.n_fidelities)
    ledger = BudgetLedger(cap=cap, count_init_budget=config.budget.count_init_budget)
    ledger.charge_initial(dataset.total_cost)
    logger.info(
        "initial dataset: %d annotations, cost %s, budget cap %s", len(dataset), dataset.total_cost, cap
    )
    return LoopState(config, env, oracle_set, sampler, dataset, ledger)


def _surrogate_view(state: LoopState, model: MfGpModel) -> Tuple[ModelView, Tuple[Fraction, ...]]:
    M = state.oracle_set.n_fidelities
    if state.kind.target_fidelity_only:
        return ModelView(model, state.env, 1, {M: 1}), (Fraction(1),)
    return ModelView(model, state.env, M), state.oracle_set.costs


def fit_surrogate(state: LoopState, seed: int) -> Tuple[ModelView, Tuple[Fraction, ...]]:
    objects, ys, ms = state.dataset.arrays()
    M = state.oracle_set.n_fidelities
    if len(objects) == 0:
        raise NumericalFailure("cannot fit the surrogate on an empty dataset")
    if state.kind.target_fidelity_only:
        m_norm = np.ones(len(ms))
    else:
        m_norm = fidelity_norm(ms, M)
    section = state.config.surrogate
    model = fit(
        state.env.features(objects),
        m_norm,
        state.oracle_set.score_sign * ys,
        SurrogateConfig(
            kernel=section.kernel,
            n_steps=section.n_steps,
            learning_rate=section.learning_rate,
            restarts=section.restarts,
            optimize=section.optimize,
            noise_variance=section.noise_variance,
        ),
        seed=seed,
    )
    state.model = model
    return _surrogate_view(state, model)


class CachedAcquisition:
    """Acquisition values memoised per (x, m) for the duration of one round."""

    def __init__(self, view: ModelView, max_samples: MaxValueSamples, costs: Sequence[Fraction]):
        self.view = view
        self.max_samples = max_samples
        self.costs = costs
        self.cache: Dict[TerminalPair, float] = {}

    def __call__(self, pairs: Sequence[TerminalPair]) -> np.ndarray:
        missing = list(dict.fromkeys(p for p in pairs if p not in self.cache))
        if missing:
            values = score_batch(self.view, missing, self.max_samples, self.costs)
            self.cache.update(zip(missing, (float(v) for v in values)))
        return np.array([self.cache[p] for p in pairs])


def select_queries(
    state: LoopState,
    proposals: Sequence[TerminalPair],
    scores: np.ndarray,
    batch_size: int,
    view: Optional[ModelView] = None,
    max_samples: Optional[MaxValueSamples] = None,
    costs: Sequence[Fraction] = (),
) -> List[TerminalPair]:
    """
    Best `batch_size` new pairs by acquisition, skipping pairs already in
    the dataset or already chosen. With the batch term enabled the pick is
    made greedily with GIBBON's repulsion over the de-duplicated proposals.
    """
    order = np.argsort(-np.asarray(scores), kind="stable")
    ranked: List[TerminalPair] = []
    seen = set()
    skipped = 0
    for i in order:
        pair = proposals[i]
        if pair in seen:
            continue
        seen.add(pair)
        if pair in state.dataset:
            skipped += 1
            continue
        ranked.append(pair)
    if skipped and len(ranked) >= batch_size:
        logger.warning("skipped %d already annotated proposals, back-filled from the ranking", skipped)

    if state.config.acquisition.gibbon_batch_term and view is not None and max_samples is not None:
        picks = greedy_gibbon_batch(view, ranked, max_samples, costs, batch_size)
        return [ranked[i] for i in picks]
    return ranked[:batch_size]


def fresh_pairs(state: LoopState, n: int, rng: np.random.Generator, attempts: int = 10) -> List[TerminalPair]:
    """
    Up to `n` uniformly drawn pairs not yet annotated, at the fidelities the
    sampler may query (the target only for SF-GFN). May return fewer when the
    space is nearly exhausted.
    """
    n_fidelities = state.config.n_fidelities
    found: Dict[TerminalPair, None] = {}
    for _ in range(attempts):
        objects = state.env.sample_objects(rng, 4 * n)
        if state.kind.target_fidelity_only:
            fidelities = np.full(len(objects), n_fidelities)
        else:
            fidelities = rng.integers(1, n_fidelities + 1, size=len(objects))
        for x, m in zip(objects, fidelities):
            pair = (x, int(m))
            if pair not in state.dataset:
                found.setdefault(pair)
            if len(found) == n:
                return list(found)
    return list(found)


def dataset_metrics(state: LoopState) -> Dict[str, float]:
    """Top-K(D), its diversity and the diverse top-K, all scored by the target oracle (uncharged)."""
    objects = state.dataset.distinct_objects()
    if not objects:
        return {"mean_topk": float("nan"), "diversity": float("nan"), "diverse_topk": float("nan")}
    scores = state.oracle_set.score(objects)
    items = [ScoredItem(x, float(s)) for x, s in zip(objects, scores)]
    loop = state.config.loop
    return summarize(items, loop.top_k, loop.diversity_threshold, state.env.kind, getattr(state.env, "length", None))


def run_round(state: LoopState) -> RoundReport:
    """
    One active-learning round.

    Args:
        state: loop state; the dataset, ledger and round index are advanced in place

    Returns:
        RoundReport for the round

    Raises:
        BudgetError: when the budget is already exhausted
        StalledError: when neither the proposals nor fresh draws hold a new pair
        NumericalFailure: from the surrogate, with the round noted
    """
    if state.ledger.exhausted:
        raise BudgetError(f"budget exhausted: {state.ledger.budget_used} >= {state.ledger.cap}")
    j = state.round_index + 1
    config = state.config
    rng = np.random.default_rng([config.seed, j, state.attempt - 1])

    try:
        view, costs = fit_surrogate(state, seed=int(rng.integers(2**31)))
        acq_config = AcqConfig(
            n_max_value_samples=config.acquisition.n_max_value_samples,
            candidate_pool_size=config.acquisition.candidate_pool_size,
            costs=tuple(float(c) for c in costs),
            gibbon_batch_term=config.acquisition.gibbon_batch_term,
        )
        max_samples = sample_max_values(view, acq_config, rng)
        acquisition = CachedAcquisition(view, max_samples, costs)
        transform = RewardTransform(
            beta=config.reward.beta,
            rho_anneal=config.reward.rho,
            round_index=j,
            exponent=config.training.reward_exponent,
        )

        def reward_fn(pairs: Sequence[TerminalPair]) -> np.ndarray:
            return np.atleast_1d(reward_transform(acquisition(pairs), transform))

        proposals = state.sampler.propose(reward_fn, config.loop.n_proposals, rng)
        scores = acquisition(proposals)
        queries = select_queries(state, proposals, scores, config.loop.batch_size, view, max_samples, costs)
        if not queries:
            fresh = fresh_pairs(state, config.loop.n_proposals, rng)
            logger.warning(
                "round %d: all %d proposals already annotated, drawing %d fresh pairs",
                j,
                len(proposals),
                len(fresh),
            )
            queries = select_queries(state, fresh, acquisition(fresh), config.loop.batch_size, view, max_samples, costs)
        if not queries:
            raise StalledError(f"round {j}: no unannotated (x, m) pair left to query")
        annotations, round_cost = evaluate_batch(state.oracle_set, queries)
    except Exception as e:
        note = f"during active-learning round {j}"
        if hasattr(e, "add_note"):
            e.add_note(note)
        else:  # Python < 3.11: same effect as BaseException.add_note
            e.__notes__ = [*getattr(e, "__notes__", []), note]
        raise

    state.dataset.extend(annotations, j)
    state.ledger.charge(round_cost)
    state.round_index = j

    proposal_items = [
        ScoredItem(x, float(s), float(a))
        for (x, _), s, a in zip(proposals, state.oracle_set.score([x for x, _ in proposals]), scores)
    ]
    metrics = dataset_metrics(state)
    report = RoundReport(
        round=j,
        spent=state.ledger.budget_used,
        mean_topk=metrics["mean_topk"],
        diversity=metrics["diversity"],
        diverse_topk=metrics["diverse_topk"],
        proposal_topk=mean_topk(proposal_items, config.loop.top_k, select_by="acquisition") if proposal_items else None,
        round_cost=round_cost,
        n_queries=len(queries),
        fidelity_counts=state.dataset.fidelity_counts(j),
        f_star_mean=float(np.mean(max_samples.values)) * state.model.y_std + state.model.y_mean,
        final_loss=state.sampler.last_loss,
    )
    logger.info(
        "round %d: %d queries %s, cost %s, spent %s/%s, top-%d %.4f",
        j,
        report.n_queries,
        report.fidelity_counts,
        round_cost,
        report.spent,
        state.ledger.cap,
        config.loop.top_k,
        report.mean_topk,
    )
    return report


def run_round_with_retry(state: LoopState) -> RoundReport:
    """run_round, retried with a fresh round seed when the numerics fail."""
    for attempt in Retrying(
        stop=stop_after_attempt(ROUND_ATTEMPTS),
        retry=retry_if_exception_type(NumericalFailure),
        wait=wait_none(),
        reraise=True,
    ):
        with attempt:
            state.attempt = attempt.retry_state.attempt_number
            if state.attempt > 1:
                logger.warning("retrying round %d (attempt %d)", state.round_index + 1, state.attempt)
            return run_round(state)
    raise NumericalFailure("round retries exhausted")


# -- experiments ---------------------------------------------------------------


@dataclass
class ExperimentResult:
    reports: List[RoundReport]
    summary: Dict
    run_dir: Optional[str] = None


def _summary(state: LoopState, reports: List[RoundReport], status: str) -> Dict:
    metrics = dataset_metrics(state)
    top = sorted(
        zip(state.dataset.distinct_objects(), state.oracle_set.score(state.dataset.distinct_objects())),
        key=lambda item: -item[1],
    )[:5]
    return {
        "status": status,
        "task": state.config.task.name,
        "sampler": state.kind.value,
        "seed": state.config.seed,
        "rounds": len(reports),
        "budget_cap": str(state.ledger.cap),
        "spent": str(state.ledger.spent),
        "initial_spend": str(state.ledger.initial_spend),
        "budget_used": str(state.ledger.budget_used),
        "n_annotations": len(state.dataset),
        "fidelity_counts": {str(m): c for m, c in state.dataset.fidelity_counts().items()},
        "mean_topK": metrics["mean_topk"],
        "diversity": metrics["diversity"],
        "diverse_topK": metrics["diverse_topk"],
        "best": [{"x": describe_object(state.env, x), "score": float(s)} for x, s in top],
    }


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """
    Run rounds until the budget Lambda = gamma * lambda_M is spent, or until
    no unannotated pair is left (summary status "stalled").

    Args:
        config: resolved experiment config
        write: persist the run directory (config, rounds, snapshots, summary)

    Returns:
        ExperimentResult with per-round reports and the final summary

    Raises:
        NumericalFailure: after retries are exhausted; partial logs are kept
    """
    state = create_loop_state(config)
    store = RunStore.create(config.task.output_dir, config.run_name) if write else None
    if store:
        store.write_config(config.to_json())
        store.write_dataset(0, state.dataset.to_dict())

    reports: List[RoundReport] = []
    max_rounds = config.loop.max_rounds
    status = "success"
    try:
        while not state.ledger.exhausted and (max_rounds is None or len(reports) < max_rounds):
            try:
                report = run_round_with_retry(state)
            except StalledError as e:
                logger.warning("stopping %s after %d rounds: %s", config.run_name, len(reports), e)
                status = "stalled"
                break
            reports.append(report)
            if store:
                store.append_round(report.to_row())
                store.write_dataset(report.round, state.dataset.to_dict())
                if state.sampler.policy is not None:
                    store.write_policy(report.round, state.sampler.policy)
    except NumericalFailure as e:
        logger.error("aborting %s after %d rounds: %s", config.run_name, len(reports), e)
        if store:
            store.write_summary(_summary(state, reports, status="numerical_failure"))
        raise

    summary = _summary(state, reports, status=status)
    if store:
        store.write_summary(summary)
    return ExperimentResult(reports, summary, str(store.root) if store else None)


def target_threshold(config: ExperimentConfig, fraction: float) -> float:
    """Score at `fraction` of the way from the worst to the best object of the task."""
    env = make_environment(config.task.name)
    oracle_set = make_oracle_set(config.task.name, env, config.budget.costs)
    scores = oracle_set.score([tuple(int(v) for v in row) for row in env.object_array()])
    low, high = float(np.min(scores)), float(np.max(scores))
    return low + fraction * (high - low)


ABLATION_COLUMNS = [
    "low_cost",
    "high_cost",
    "threshold",
    "n_seeds",
    "mf_budget_to_threshold",
    "sf_budget_to_threshold",
    "advantage",
    "mf_final_topK",
    "sf_final_topK",
]


def _reach(result: ExperimentResult, threshold: float) -> float:
    spent = budget_to_threshold(result.reports, threshold)
    return math.inf if spent is None else float(spent)


def _median_or_none(values: Sequence[float]) -> Optional[float]:
    values = [v for v in values if v is not None]
    if not values:
        return None
    middle = statistics.median(values)
    return None if math.isnan(middle) else middle


def cost_ablation(
    config: ExperimentConfig,
    cost_pairs: Sequence[Tuple[str, str]],
    seeds: Optional[Sequence[int]] = None,
    write: bool = True,
) -> List[Dict]:
    """
    Compare MF-GFN against SF-GFN over several low-fidelity costs.

    Every cost pair runs with the same seeds (`ablation.seeds`, or the task
    seed). SF-GFN only sees the high cost, so it runs once per distinct
    high cost and seed. Budgets-to-threshold are medians over seeds, with a
    run that never reaches the threshold counted as infinitely expensive;
    the advantage is the median of the per-seed differences SF - MF.

    Returns:
        one row per cost pair; `mf_runs` and `sf_runs` list the run directories per seed
    """
    if config.n_fidelities != 2:
        raise ConfigError(f"cost ablation needs a two-fidelity task, {config.task.name} has {config.n_fidelities}")
    if not cost_pairs:
        raise ConfigError("ablation.cost_pairs is empty")
    seeds = list(seeds or config.ablation.seeds or [config.seed])
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"ablation seeds must be distinct, got {seeds}")
    threshold = target_threshold(config, config.ablation.threshold_fraction)
    base_dir = ablation_dir(config)

    sf_runs: Dict[Tuple[Fraction, int], ExperimentResult] = {}
    rows: List[Dict] = []
    for low, high in cost_pairs:
        if as_cost(low) > as_cost(high):
            raise ConfigError(f"cost pair ({low}, {high}): the low fidelity must not cost more than the high one")
        if as_cost(low) == as_cost(high):
            logger.warning("cost pair (%s, %s) has equal costs; the low fidelity carries no cost advantage", low, high)
        mf_results, sf_results = [], []
        for seed in seeds:
            mf_config = config.with_updates(
                {
                    "budget": {"costs": [low, high]},
                    "task": {
                        "sampler": SamplerKind.MF_GFN.value,
                        "seed": seed,
                        "output_dir": base_dir,
                        "run_name": f"mf_{low}_{high}_seed{seed}",
                    },
                }
            )
            mf_results.append(run_experiment(mf_config, write=write))
            key = (as_cost(high), seed)
            if key not in sf_runs:
                sf_config = config.with_updates(
                    {
                        "budget": {"costs": [low, high]},
                        "task": {
                            "sampler": SamplerKind.SF_GFN.value,
                            "seed": seed,
                            "output_dir": base_dir,
                            "run_name": f"sf_{high}_seed{seed}",
                        },
                    }
                )
                sf_runs[key] = run_experiment(sf_config, write=write)
            sf_results.append(sf_runs[key])

        mf_reach = [_reach(r, threshold) for r in mf_results]
        sf_reach = [_reach(r, threshold) for r in sf_results]
        # neither run reaching the threshold says nothing about the advantage
        advantages = [None if math.isinf(m) and math.isinf(s) else s - m for m, s in zip(mf_reach, sf_reach)]
        mf_budget, sf_budget = statistics.median(mf_reach), statistics.median(sf_reach)
        row = {
            "low_cost": low,
            "high_cost": high,
            "threshold": threshold,
            "n_seeds": len(seeds),
            "mf_budget_to_threshold": None if math.isinf(mf_budget) else mf_budget,
            "sf_budget_to_threshold": None if math.isinf(sf_budget) else sf_budget,
            "advantage": _median_or_none(advantages),
            "mf_final_topK": statistics.median(r.summary["mean_topK"] for r in mf_results),
            "sf_final_topK": statistics.median(r.summary["mean_topK"] for r in sf_results),
            "seeds": seeds,
            "mf_runs": [r.run_dir for r in mf_results],
            "sf_runs": [r.run_dir for r in sf_results],
        }
        rows.append(row)
        logger.info(
            "costs (%s, %s), %d seeds: MF reaches %.4f at %s, SF at %s",
            low,
            high,
            len(seeds),
            threshold,
            row["mf_budget_to_threshold"],
            row["sf_budget_to_threshold"],
        )
    if write:
        write_table(f"{base_dir}/ablation.csv", rows, ABLATION_COLUMNS)
    return rows


def ablation_dir(config: ExperimentConfig) -> str:
    return f"{config.task.output_dir}/{config.run_name}_ablation"
