"""
MF-GFN Toolkit - Main Application
Entry point for multi-fidelity active-learning experiments
"""

import logging
import sys
from pathlib import Path

import click
import numpy as np
from dotenv import load_dotenv

from agents.gflownet import sample_terminals
from agents.orchestrator import ABLATION_COLUMNS, ablation_dir, cost_ablation, run_experiment
from agents.samplers import SamplerKind
from sessions.config import load_config
from sessions.run_store import RunStore, load_policy, load_rounds
from tools.environments import describe_object
from tools.errors import ConfigError, MfgfnError, NumericalFailure
from tools.oracles import inspect_oracle, make_environment, make_oracle_set
from tools.plotting import learning_curves_svg

# Load environment variables (MFGFN_SEED)
load_dotenv()

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def display_welcome():
    """Display welcome banner."""
    click.echo("\n" + "=" * 60)
    click.echo("🌊 MF-GFN: MULTI-FIDELITY ACTIVE LEARNING")
    click.echo("=" * 60)
    click.echo("GFlowNet sampling of (candidate, fidelity) pairs with:")
    click.echo("  • Exact multi-fidelity GP surrogate")
    click.echo("  • Cost-weighted max-value entropy search (GIBBON)")
    click.echo("  • Budget-accounted batch active learning")
    click.echo("=" * 60)


def _fail(error: Exception) -> None:
    if isinstance(error, ConfigError):
        click.echo(f"❌ Config error: {error}", err=True)
        sys.exit(EXIT_CONFIG)
    if isinstance(error, NumericalFailure):
        click.echo(f"❌ Numerical failure: {error}", err=True)
        sys.exit(EXIT_NUMERICAL)
    click.echo(f"❌ {error}", err=True)
    sys.exit(EXIT_FAILURE)


def _overrides(seed, override) -> list:
    items = list(override)
    if seed is not None:
        items.append(f"task.seed={seed}")
    return items


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for round progress, -vv for fitting diagnostics.")
def cli(verbose):
    """Multi-fidelity GFlowNet active-learning toolkit."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--config", "config_path", type=click.Path(), help="TOML or JSON experiment file.")
@click.option("--seed", type=int, default=None, help="Overrides task.seed.")
@click.option("--override", "-o", multiple=True, help="key=value, e.g. gamma=10 or loop.batch_size=8.")
def run(config_path, seed, override):
    """Run one active-learning experiment."""
    display_welcome()
    try:
        config = load_config(config_path, _overrides(seed, override))
        click.echo(f"\n📋 {config.task.name} | sampler {config.task.sampler.value} | seed {config.seed}")
        result = run_experiment(config)
    except MfgfnError as e:
        _fail(e)
        return

    summary = result.summary
    click.echo("\n" + "=" * 60)
    click.echo(f"✅ {summary['rounds']} rounds, budget used {summary['budget_used']} of {summary['budget_cap']}")
    click.echo(f"Top-{config.loop.top_k}(D): {summary['mean_topK']:.4f}")
    click.echo(f"Diversity: {summary['diversity']:.4f}")
    click.echo(f"Run directory: {result.run_dir}")
    if summary["status"] == "stalled":
        click.echo("⚠️  Stopped early: no unannotated (x, m) pair was left to query")
    click.echo("=" * 60)


@cli.command()
@click.option("--config", "config_path", type=click.Path(), help="Two-fidelity experiment file.")
@click.option("--costs", default=None, help='Cost pairs "low:high,...", e.g. "0.2:20,1:20,10:20".')
@click.option("--seeds", default=None, help='Seeds shared by every cost pair, e.g. "0,1,2".')
@click.option("--seed", type=int, default=None)
@click.option("--override", "-o", multiple=True)
def ablate(config_path, costs, seeds, seed, override):
    """Compare MF-GFN and SF-GFN across low-fidelity costs."""
    display_welcome()
    try:
        config = load_config(config_path, _overrides(seed, override))
        if costs:
            pairs = []
            for item in costs.split(","):
                if ":" not in item:
                    raise ConfigError(f"cost pair {item!r} is not of the form low:high")
                low, high = item.split(":", 1)
                pairs.append((low.strip(), high.strip()))
        else:
            pairs = list(config.ablation.cost_pairs)
        seed_list = _parse_seeds(seeds) if seeds else None
        rows = cost_ablation(config, pairs, seeds=seed_list)
    except MfgfnError as e:
        _fail(e)
        return

    click.echo("\n" + " | ".join(ABLATION_COLUMNS))
    for row in rows:
        click.echo(" | ".join(str(row.get(col)) for col in ABLATION_COLUMNS))

    series = {}
    for row in rows:
        several = len(row["seeds"]) > 1
        for seed_value, mf_run, sf_run in zip(row["seeds"], row["mf_runs"], row["sf_runs"]):
            suffix = f" s{seed_value}" if several else ""
            series.setdefault(f"mf ({row['low_cost']}, {row['high_cost']}){suffix}", _curve(mf_run))
            series.setdefault(f"sf ({row['high_cost']}){suffix}", _curve(sf_run))
    out = Path(ablation_dir(config)) / "ablation.svg"
    out.write_text(learning_curves_svg(series, title=f"{config.task.name}: cost ablation"))
    click.echo(f"\n✅ Table and overlay written to {out.parent}")


def _parse_seeds(text: str) -> list:
    try:
        return [int(item) for item in text.split(",")]
    except ValueError:
        raise ConfigError(f"seeds {text!r} are not a comma-separated list of integers") from None


def _curve(run_dir: str):
    return [(row["spent"], row["mean_topK"]) for row in load_rounds(run_dir) if row.get("spent", 0) > 0]


@cli.command()
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path())
@click.option("--output", "-o", default="learning_curves.svg", type=click.Path())
@click.option("--title", default="")
def plot(run_dirs, output, title):
    """Plot mean top-K against cumulative cost for one or more runs."""
    try:
        series = {Path(d).name: _curve(d) for d in run_dirs}
        Path(output).write_text(learning_curves_svg(series, title=title))
    except (MfgfnError, ValueError) as e:
        _fail(e)
        return
    click.echo(f"✅ Plot written to {output}")


@cli.command()
@click.argument("task")
@click.argument("obj")
@click.option("--fidelity", "-m", type=int, required=True)
def oracle(task, obj, fidelity):
    """Evaluate OBJ ("i,j" grid cell or sequence) with oracle m of TASK."""
    result = inspect_oracle(task, obj, fidelity)
    if result["status"] != "success":
        click.echo(f"❌ {result['error_message']}", err=True)
        sys.exit(EXIT_FAILURE)
    click.echo(f"f_{fidelity}({obj}) = {result['value']:.6g}")
    click.echo(f"cost: {result['cost']}")
    if "point" in result:
        click.echo(f"point: {result['point']}")


@cli.command()
@click.argument("run_dir", type=click.Path())
@click.option("--n", "n_samples", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
def sample(run_dir, n_samples, seed):
    """Draw candidates from the last policy snapshot of a run."""
    try:
        config = load_config(str(Path(run_dir) / "config.json"))
        env = make_environment(config.task.name)
        oracle_set = make_oracle_set(config.task.name, env, config.budget.costs)
        if config.task.sampler != SamplerKind.MF_GFN:
            env = env.single_fidelity()
        net = load_policy(str(RunStore(run_dir).latest_policy()))
        pairs = sample_terminals(net, env, n_samples, np.random.default_rng(seed))
    except MfgfnError as e:
        _fail(e)
        return
    scores = oracle_set.score([x for x, _ in pairs])
    click.echo(f"{'object':<24} {'m':>3} {'target score':>14}")
    for (x, m), score in zip(pairs, scores):
        click.echo(f"{describe_object(env, x):<24} {m:>3} {score:>14.6g}")


if __name__ == "__main__":
    cli()
