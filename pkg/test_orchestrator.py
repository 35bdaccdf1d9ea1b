"""
Tests for the active-learning loop, the budget ledger and the cost ablation
"""

import json
import math
import statistics
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

import agents.orchestrator as orchestrator
from agents.gflownet import PolicyConfig, PolicyNet
from agents.orchestrator import (
    AnnotatedDataset,
    BudgetLedger,
    ExperimentResult,
    RoundReport,
    cost_ablation,
    create_loop_state,
    init_dataset,
    run_experiment,
    run_round,
    run_round_with_retry,
    select_queries,
    target_threshold,
)
from agents.samplers import RandomSampler
from sessions.config import load_config
from sessions.run_store import RunStore, load_policy
from tools.errors import (
    BudgetError,
    ConfigError,
    DomainError,
    DuplicateQueryError,
    NumericalFailure,
    StalledError,
)
from tools.metrics import budget_to_threshold
from tools.oracles import Annotation, as_cost, make_environment, make_oracle_set


def tiny_config(tmp_path=None, task="sequence_toy", sampler="mf_gfn", extra=()):
    overrides = [
        f"task.name={task}",
        f"sampler={sampler}",
        "seed=1",
        "training.n_trajectories=64",
        "policy.hidden_width=16",
        "surrogate.optimize=false",
        "n_max_value_samples=3",
        "candidate_pool_size=200",
        "loop.batch_size=5",
        "n_proposals=20",
        "max_rounds=2",
    ]
    if tmp_path is not None:
        overrides.append(f'output_dir="{tmp_path}"')
    return load_config(None, overrides + list(extra))


def test_initial_dataset_costs():
    env = make_environment("branin")
    branin = make_oracle_set("branin", env)
    dataset = init_dataset(branin, env, [20, 20, 2], seed=0)
    assert len(dataset) == 42
    assert dataset.total_cost == Fraction(21, 5)
    assert dataset.fidelity_counts() == {1: 20, 2: 20, 3: 2}

    env = make_environment("hartmann6")
    hartmann = init_dataset(make_oracle_set("hartmann6", env), env, [80, 40, 5], seed=0)
    assert hartmann.total_cost == Fraction(25)

    empty = init_dataset(branin, make_environment("branin"), [0, 0, 0], seed=0)
    assert len(empty) == 0 and empty.total_cost == 0


def test_initial_dataset_is_seeded():
    env = make_environment("sequence_toy")
    oracles = make_oracle_set("sequence_toy", env)
    first = init_dataset(oracles, env, [10, 2], seed=3)
    second = init_dataset(oracles, env, [10, 2], seed=3)
    assert first.to_dict() == second.to_dict()
    with pytest.raises(ValueError):
        init_dataset(oracles, env, [10], seed=3)


def test_dataset_rejects_duplicates_and_bad_fidelities():
    dataset = AnnotatedDataset(2)
    dataset.add(Annotation((1, 2), 0.5, 1, Fraction(1, 5)), round_index=0)
    assert ((1, 2), 1) in dataset
    assert ((1, 2), 2) not in dataset
    with pytest.raises(DuplicateQueryError):
        dataset.add(Annotation((1, 2), 0.7, 1, Fraction(1, 5)), round_index=1)
    with pytest.raises(DomainError):
        dataset.add(Annotation((0, 0), 0.1, 3, Fraction(1)), round_index=1)
    dataset.add(Annotation((1, 2), 0.9, 2, Fraction(20)), round_index=1)
    assert dataset.distinct_objects() == [(1, 2)]
    assert dataset.total_cost == Fraction(101, 5)


def test_budget_ledger():
    ledger = BudgetLedger(cap=Fraction(10))
    ledger.charge_initial(Fraction(4))
    ledger.charge(Fraction(3, 10))
    ledger.charge(Fraction(7, 10))
    assert ledger.spent == 1 and ledger.budget_used == 1 and ledger.total == 5
    assert not ledger.exhausted
    with pytest.raises(BudgetError):
        ledger.charge(Fraction(-1))
    counted = BudgetLedger(cap=Fraction(5), count_init_budget=True)
    counted.charge_initial(Fraction(5))
    assert counted.exhausted


@pytest.mark.parametrize("task", ["sequence_toy", "branin"])
def test_round_charges_exactly_the_queries(task):
    state = create_loop_state(tiny_config(task=task))
    before = len(state.dataset)
    report = run_round(state)

    new = [r for r in state.dataset.records if r.round == 1]
    assert len(state.dataset) == before + 5
    assert report.n_queries == len(new) == 5
    assert state.ledger.spent == report.round_cost == sum((r.cost for r in new), Fraction(0))
    assert report.spent == state.ledger.budget_used
    assert sum(report.fidelity_counts.values()) == 5
    assert state.round_index == 1
    assert report.final_loss is not None and np.isfinite(report.final_loss)
    assert state.sampler.policy is not None


def test_seeded_branin_run_spends_exactly_the_annotation_costs():
    config = tiny_config(task="branin", extra=["max_rounds=3"])
    costs = [as_cost(c) for c in config.budget.costs]
    result = run_experiment(config, write=False)

    assert len(result.reports) == 3
    for report in result.reports:
        charged = sum((costs[m - 1] * n for m, n in report.fidelity_counts.items()), Fraction(0))
        assert report.round_cost == charged
    assert Fraction(result.summary["spent"]) == sum((r.round_cost for r in result.reports), Fraction(0))
    assert result.reports[-1].spent == Fraction(result.summary["budget_used"])


def test_single_fidelity_run_only_queries_the_target_oracle():
    state = create_loop_state(tiny_config(sampler="sf_gfn"))
    assert state.dataset.fidelity_counts() == {1: 0, 2: 10}
    run_round(state)
    run_round(state)
    assert all(r.m == 2 for r in state.dataset.records)
    assert state.ledger.spent == Fraction(200)


@pytest.mark.parametrize("sampler", ["random", "random_fid_gfn"])
def test_baselines_complete_a_round(sampler):
    state = create_loop_state(tiny_config(sampler=sampler))
    report = run_round(state)
    assert report.n_queries == 5
    if sampler == "random":
        assert state.sampler.policy is None
        assert report.final_loss is None


def test_exhausted_budget_refuses_another_round():
    state = create_loop_state(tiny_config(extra=["gamma=0"]))
    assert state.ledger.exhausted
    with pytest.raises(BudgetError):
        run_round(state)
    result = run_experiment(tiny_config(extra=["gamma=0"]), write=False)
    assert result.reports == []
    assert result.summary["rounds"] == 0


def test_select_queries_skips_annotated_pairs_and_back_fills():
    state = create_loop_state(tiny_config())
    known = (state.dataset.records[0].x, state.dataset.records[0].m)
    fresh = [((t,) * 8, m) for t in range(4) for m in (1, 2) if ((t,) * 8, m) not in state.dataset]
    proposals = [known, fresh[0], fresh[1], fresh[0]]
    picks = select_queries(state, proposals, np.array([10.0, 5.0, 3.0, 4.0]), batch_size=2)
    assert picks == [fresh[0], fresh[1]]
    # fewer new proposals than the batch size: take what there is
    assert select_queries(state, proposals, np.array([10.0, 5.0, 3.0, 4.0]), batch_size=5) == picks


def only_annotated_proposals(monkeypatch, state):
    known = [(r.x, r.m) for r in state.dataset.records]
    monkeypatch.setattr(RandomSampler, "propose", lambda self, reward_fn, n, rng: known[:n])
    return known


def test_round_of_already_annotated_proposals_draws_fresh_pairs(monkeypatch):
    state = create_loop_state(tiny_config(sampler="random"))
    known = only_annotated_proposals(monkeypatch, state)
    report = run_round(state)

    assert report.n_queries == 5
    assert state.ledger.spent == report.round_cost > 0
    new = [(r.x, r.m) for r in state.dataset.records if r.round == 1]
    assert len(new) == 5 and not set(new) & set(known)


def test_single_fidelity_fresh_pairs_stay_at_the_target():
    state = create_loop_state(tiny_config(sampler="sf_gfn"))
    pairs = orchestrator.fresh_pairs(state, 30, np.random.default_rng(0))
    assert len(pairs) == 30
    assert all(m == 2 and (x, m) not in state.dataset for x, m in pairs)


def test_experiment_stops_when_no_new_pair_is_left(tmp_path, monkeypatch):
    config = tiny_config(tmp_path, sampler="random").with_updates({"loop": {"max_rounds": None}})
    assert config.loop.max_rounds is None
    state = create_loop_state(config)
    only_annotated_proposals(monkeypatch, state)
    monkeypatch.setattr(orchestrator, "fresh_pairs", lambda state, n, rng, attempts=10: [])

    with pytest.raises(StalledError):
        run_round(state)
    assert state.ledger.spent == 0

    result = run_experiment(config)
    assert result.reports == []
    assert result.summary["status"] == "stalled"
    assert json.loads((tmp_path / config.run_name / "summary.json").read_text())["status"] == "stalled"


def test_numerical_failure_is_retried_with_a_new_seed(monkeypatch):
    state = create_loop_state(tiny_config())
    original = orchestrator.fit_surrogate
    calls = []

    def flaky(state, seed):
        calls.append(state.attempt)
        if len(calls) == 1:
            raise NumericalFailure("cholesky failed")
        return original(state, seed)

    monkeypatch.setattr(orchestrator, "fit_surrogate", flaky)
    report = run_round_with_retry(state)
    assert calls == [1, 2]
    assert report.round == 1


def test_persistent_numerical_failure_keeps_partial_logs(tmp_path, monkeypatch):
    def broken(state, seed):
        raise NumericalFailure("cholesky failed")

    monkeypatch.setattr(orchestrator, "fit_surrogate", broken)
    config = tiny_config(tmp_path)
    with pytest.raises(NumericalFailure) as info:
        run_experiment(config)
    assert any("round 1" in note for note in info.value.__notes__)
    summary = json.loads((tmp_path / config.run_name / "summary.json").read_text())
    assert summary["status"] == "numerical_failure"
    assert summary["rounds"] == 0


def test_run_directory_contents(tmp_path):
    config = tiny_config(tmp_path)
    result = run_experiment(config)
    root = tmp_path / config.run_name
    assert result.run_dir == str(root)
    assert len(result.reports) == 2
    assert len((root / "rounds.csv").read_text().strip().splitlines()) == 3
    assert sorted(p.name for p in (root / "datasets").iterdir()) == ["round_000.json", "round_001.json", "round_002.json"]
    assert sorted(p.name for p in (root / "policies").iterdir()) == ["round_001.npz", "round_002.npz"]
    net = load_policy(str(RunStore(str(root)).latest_policy()))
    assert net.is_finite()
    assert net.n_parameters == PolicyNet.for_environment(make_environment(config.task.name), PolicyConfig(16, 2)).n_parameters
    assert json.loads((root / "summary.json").read_text())["status"] == "success"
    assert load_config(str(root / "config.json")) == config


def test_runs_are_reproducible(tmp_path):
    first = run_experiment(tiny_config(tmp_path / "a"))
    second = run_experiment(tiny_config(tmp_path / "b"))
    name = tiny_config().run_name
    assert (tmp_path / "a" / name / "rounds.csv").read_bytes() == (tmp_path / "b" / name / "rounds.csv").read_bytes()
    assert first.summary == second.summary


def test_target_threshold_lies_inside_the_score_range():
    config = tiny_config()
    low, high = target_threshold(config, 0.0), target_threshold(config, 1.0)
    assert low < target_threshold(config, 0.9) <= high


def test_cost_ablation_shares_seeds_and_reuses_single_fidelity_runs(tmp_path):
    config = tiny_config(tmp_path, extra=["max_rounds=1"])
    rows = cost_ablation(config, [("0.2", "20"), ("1", "20")], seeds=[0, 1])
    assert [(r["low_cost"], r["high_cost"]) for r in rows] == [("0.2", "20"), ("1", "20")]
    assert rows[0]["n_seeds"] == 2 and rows[0]["seeds"] == [0, 1]
    assert rows[0]["sf_runs"] == rows[1]["sf_runs"]
    assert len(set(rows[0]["sf_runs"] + rows[0]["mf_runs"] + rows[1]["mf_runs"])) == 6
    for run_dir, seed in zip(rows[1]["mf_runs"], [0, 1]):
        assert run_dir.endswith(f"mf_1_20_seed{seed}")
        assert json.loads((Path(run_dir) / "summary.json").read_text())["seed"] == seed
    table = (tmp_path / f"{config.run_name}_ablation" / "ablation.csv").read_text().splitlines()
    assert len(table) == 3 and table[0].startswith("low_cost,high_cost,threshold,n_seeds")


def test_cost_ablation_reports_medians_over_seeds(monkeypatch):
    # budget at which each (sampler, seed) run first reaches the threshold; None never does
    reach = {
        ("mf_gfn", 0): "2", ("mf_gfn", 1): "4", ("mf_gfn", 2): None,
        ("sf_gfn", 0): "10", ("sf_gfn", 1): "6", ("sf_gfn", 2): None,
    }

    def fake_run(config, write=True):
        spent = reach[(config.task.sampler.value, config.seed)]
        if spent is None:
            return ExperimentResult([RoundReport(1, Fraction(50), 0.0, 0.0, 0.0)], {"mean_topK": 0.0})
        return ExperimentResult([RoundReport(1, Fraction(spent), 1.0, 0.0, 1.0)], {"mean_topK": 1.0})

    monkeypatch.setattr(orchestrator, "run_experiment", fake_run)
    monkeypatch.setattr(orchestrator, "target_threshold", lambda config, fraction: 0.5)
    (row,) = cost_ablation(tiny_config(), [("0.2", "20")], seeds=[0, 1, 2], write=False)
    assert row["mf_budget_to_threshold"] == 4
    assert row["sf_budget_to_threshold"] == 10
    # per-seed advantages 8 and 2; the seed where neither run arrives is left out
    assert row["advantage"] == 5
    assert row["mf_final_topK"] == 1.0


def test_cost_ablation_seeds_come_from_the_config(monkeypatch):
    seen = []

    def fake_run(config, write=True):
        seen.append((config.task.sampler.value, config.seed))
        return ExperimentResult([], {"mean_topK": 0.0})

    monkeypatch.setattr(orchestrator, "run_experiment", fake_run)
    config = tiny_config(extra=["ablation.seeds=[4, 7]"])
    (row,) = cost_ablation(config, [("0.2", "20")], write=False)
    assert seen == [("mf_gfn", 4), ("sf_gfn", 4), ("mf_gfn", 7), ("sf_gfn", 7)]
    assert row["mf_budget_to_threshold"] is None and row["advantage"] is None

    seen.clear()
    cost_ablation(tiny_config(), [("0.2", "20")], write=False)
    assert seen == [("mf_gfn", 1), ("sf_gfn", 1)]


def test_cost_ablation_validation():
    with pytest.raises(ConfigError):
        cost_ablation(tiny_config(task="branin"), [("0.1", "1")], write=False)
    with pytest.raises(ConfigError):
        cost_ablation(tiny_config(), [], write=False)
    with pytest.raises(ConfigError):
        cost_ablation(tiny_config(), [("30", "20")], write=False)
    with pytest.raises(ConfigError):
        cost_ablation(tiny_config(), [("0.2", "20")], seeds=[1, 1], write=False)


# -- benchmark-scale trends (pytest -m slow) ------------------------------------

CONFIGS = Path(__file__).parent / "configs"


def median_budget_to_threshold(config, sampler, seeds, threshold):
    spends = []
    for seed in seeds:
        run = run_experiment(config.with_updates({"task": {"sampler": sampler, "seed": seed}}), write=False)
        spent = budget_to_threshold(run.reports, threshold)
        spends.append(math.inf if spent is None else float(spent))
    return statistics.median(spends)


@pytest.mark.slow
def test_branin_multi_fidelity_reaches_the_optimum_for_half_the_budget():
    config = load_config(str(CONFIGS / "branin_mf.toml"))
    assert config.budget.gamma == 42 and config.loop.batch_size == 30 and config.loop.top_k == 50
    threshold = target_threshold(config, 0.95)
    seeds = [0, 1, 2, 3, 4]

    mf = median_budget_to_threshold(config, "mf_gfn", seeds, threshold)
    sf = median_budget_to_threshold(config, "sf_gfn", seeds, threshold)
    random = median_budget_to_threshold(config, "random", seeds, threshold)
    assert mf < math.inf
    assert mf <= 0.5 * sf
    assert random == math.inf


@pytest.mark.slow
def test_hartmann_multi_fidelity_reaches_the_threshold_first():
    config = load_config(str(CONFIGS / "hartmann_mf.toml"))
    assert config.budget.gamma == 50 and config.loop.batch_size == 10
    threshold = target_threshold(config, 0.9)

    mf = median_budget_to_threshold(config, "mf_gfn", [0, 1, 2], threshold)
    sf = median_budget_to_threshold(config, "sf_gfn", [0, 1, 2], threshold)
    assert mf < sf


@pytest.mark.slow
def test_advantage_shrinks_as_the_low_fidelity_gets_dearer():
    config = load_config(str(CONFIGS / "sequence_mf.toml"))
    pairs = [("0.2", "20"), ("1", "20"), ("10", "20")]
    rows = cost_ablation(config, pairs, seeds=[0, 1, 2], write=False)

    # no advantage when neither sampler gets there
    advantages = [0.0 if r["advantage"] is None else r["advantage"] for r in rows]
    assert all(later <= earlier for earlier, later in zip(advantages, advantages[1:])), advantages


@pytest.mark.slow
def test_diverse_top_k_keeps_most_of_the_top_k_score():
    config = load_config(str(CONFIGS / "sequence_mf.toml"))
    assert config.loop.diversity_threshold == 0.6
    summary = run_experiment(config, write=False).summary
    assert summary["mean_topK"] > 0
    assert summary["diverse_topK"] >= 0.8 * summary["mean_topK"]
