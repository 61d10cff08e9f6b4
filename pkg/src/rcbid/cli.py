"""Command line interface.

Exit codes: 0 on success, 2 on configuration errors, 3 on data errors.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .agents import load_artifact, save_artifact
from .experiment import (
    ConfigError,
    build_split_days,
    load_config,
    run_experiment,
    sc_constraints,
)
from .market import DatasetError, read_dataset, write_dataset
from .metrics import DayResult, andr, ans, csr, read_day_results, write_day_results
from .oracle import RatioGrid, solve_fixed_ratio, solve_slotwise_oracle
from .training import cem_rollout, evaluate, fixed_ratio_day, pid_rollout, train

EXIT_CONFIG = 2
EXIT_DATA = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path: str):
    try:
        return load_config(path)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except FileNotFoundError as exc:
        _fail(EXIT_CONFIG, f"config not found: {exc}")


def _read_days(data_dir: str):
    paths = sorted(Path(data_dir).glob("*.jsonl"))
    if not paths:
        _fail(EXIT_DATA, f"no .jsonl day files in {data_dir}")
    try:
        return [(p.stem, read_dataset(p)) for p in paths]
    except DatasetError as exc:
        _fail(EXIT_DATA, str(exc))


@click.group()
def main() -> None:
    """ROI-constrained bidding: simulate, solve, train, evaluate."""


@main.command("gen-market")
@click.option("--config", "config_path", required=True, help="Experiment config (YAML).")
@click.option("--days", type=int, required=True, help="Number of days to generate.")
@click.option("--seed", type=int, default=0, show_default=True, help="Base day seed.")
@click.option("--out", "out_dir", required=True, help="Output directory for day files.")
def gen_market(config_path: str, days: int, seed: int, out_dir: str) -> None:
    """Generate market days and write them as .jsonl datasets."""
    config = _load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    instances = build_split_days(config, config.market, days, seed)
    for i, inst in enumerate(instances):
        path = out / f"day_{i:03d}.jsonl"
        write_dataset(inst, path)
        click.echo(str(path))


@main.command("oracle")
@click.option("--data", "data_dir", required=True, help="Directory of day files.")
@click.option("--grid-step", type=float, default=0.1, show_default=True)
@click.option("--out", "out_path", required=True, help="Output JSONL of oracle plans.")
def oracle_cmd(data_dir: str, grid_step: float, out_path: str) -> None:
    """Solve the slot-wise hindsight oracle for every day file."""
    days = _read_days(data_dir)
    grid = RatioGrid.with_step(grid_step)
    with Path(out_path).open("w", encoding="utf-8") as fh:
        for name, inst in days:
            sol = solve_slotwise_oracle(inst, grid)
            record = {
                "day": name,
                "D_star": sol.delivery,
                "C_star": sol.cost,
                "betas": list(sol.betas),
            }
            fh.write(json.dumps(record) + "\n")
    click.echo(out_path)


@main.command("train")
@click.option("--config", "config_path", required=True, help="Experiment config (YAML).")
@click.option("--out", "out_path", required=True, help="Policy artifact output path.")
def train_cmd(config_path: str, out_path: str) -> None:
    """Train the Bayesian curriculum bidder from an experiment config."""
    config = _load_config(config_path)
    constraints = sc_constraints(config) if config.setting == "SC" else (config.roi_limit, float("inf"))
    result = train(config.market, constraints, config.schedule, config.training, config.seed)
    save_artifact(result.artifact, out_path)
    feasible = sum(1 for e in result.episodes if e.feasible)
    click.echo(f"trained {len(result.episodes)} episodes ({feasible} feasible); artifact at {out_path}")


def _day_results(evals, days, agent: str, setting: str) -> list[DayResult]:
    out = []
    for i, (e, (name, inst)) in enumerate(zip(evals, days)):
        out.append(
            DayResult(
                day_id=name,
                setting=setting,
                roi_limit=inst.roi_limit,
                budget=inst.budget,
                delivery=e.delivery,
                cost=e.cost,
                oracle_value=e.oracle_value,
                feasible=e.feasible,
                agent=agent,
            )
        )
    return out


@main.command("eval")
@click.option("--artifact", "artifact_path", required=True)
@click.option("--config", "config_path", required=True, help="Experiment config (for the market model).")
@click.option("--data", "data_dir", required=True, help="Directory of day files.")
@click.option("--out", "out_path", required=True, help="Per-day CSV output path.")
@click.option("--seed", type=int, default=0, show_default=True)
def eval_cmd(artifact_path: str, config_path: str, data_dir: str, out_path: str, seed: int) -> None:
    """Evaluate a trained policy artifact on a day directory."""
    config = _load_config(config_path)
    try:
        artifact = load_artifact(artifact_path)
    except (OSError, ValueError, KeyError) as exc:
        _fail(EXIT_DATA, f"cannot load artifact: {exc}")
    days = _read_days(data_dir)
    grid = artifact.grid
    oracle_values = [solve_slotwise_oracle(inst, grid).delivery for _, inst in days]
    evals = evaluate(artifact, [inst for _, inst in days], oracle_values, config.market, seed=seed)
    results = _day_results(evals, days, "policy", config.setting)
    write_day_results(results, out_path)
    click.echo(out_path)


@main.command("baseline")
@click.option("--kind", type=click.Choice(["pid", "cem", "fixed"]), required=True)
@click.option("--data", "data_dir", required=True, help="Directory of day files to evaluate.")
@click.option("--out", "out_path", required=True, help="Per-day CSV output path.")
@click.option("--fit-data", "fit_dir", default=None, help="Day directory to fit the fixed ratio on (defaults to --data).")
@click.option("--grid-step", type=float, default=0.1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def baseline_cmd(kind: str, data_dir: str, out_path: str, fit_dir: str | None, grid_step: float, seed: int) -> None:
    """Run a baseline bidder over a day directory."""
    days = _read_days(data_dir)
    grid = RatioGrid.with_step(grid_step)
    oracle_values = [solve_slotwise_oracle(inst, grid).delivery for _, inst in days]
    if kind == "pid":
        evals = [pid_rollout(inst, d_star) for (_, inst), d_star in zip(days, oracle_values)]
    elif kind == "cem":
        evals = [
            cem_rollout(inst, d_star, np.random.default_rng(np.random.SeedSequence([seed, i])))
            for i, ((_, inst), d_star) in enumerate(zip(days, oracle_values))
        ]
    else:
        fit_days = _read_days(fit_dir) if fit_dir else days
        ratio = solve_fixed_ratio([inst for _, inst in fit_days], grid)
        evals = [fixed_ratio_day(inst, d_star, ratio) for (_, inst), d_star in zip(days, oracle_values)]
    setting = "SC" if all(inst.budget_is_unlimited for _, inst in days) else "MC"
    write_day_results(_day_results(evals, days, kind, setting), out_path)
    click.echo(out_path)


@main.command("metrics")
@click.option("--in", "in_path", required=True, help="Per-day CSV to score.")
def metrics_cmd(in_path: str) -> None:
    """Print ANS / CSR / ANDR per agent from a per-day CSV."""
    try:
        results = read_day_results(in_path)
    except (OSError, ValueError) as exc:
        _fail(EXIT_DATA, f"cannot read results: {exc}")
    if not results:
        _fail(EXIT_DATA, "no result rows")
    agents = sorted({r.agent for r in results})
    for agent in agents:
        rows = [r for r in results if r.agent == agent]
        try:
            regret = f"{andr(rows):.2f}%"
        except ValueError:
            regret = "undefined"
        click.echo(f"{agent}: ANS={ans(rows):.4f} CSR={csr(rows):.4f} ANDR={regret}")


@main.command("run")
@click.option("--config", "config_path", required=True, help="Experiment config (YAML).")
@click.option("--out", "out_dir", default=None, help="Override the config's output directory.")
def run_cmd(config_path: str, out_dir: str | None) -> None:
    """Run the full experiment pipeline (train, evaluate, write CSVs)."""
    config = _load_config(config_path)
    output = run_experiment(config, output_dir=out_dir)
    click.echo(str(output.per_day_path))
    click.echo(str(output.summary_path))


if __name__ == "__main__":
    main()
