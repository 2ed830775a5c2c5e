#!/usr/bin/env python3
"""
ADL Command-Line Interface

Subcommands: gen-tasks, pretrain, train-preconds, plan, export-mip,
simulate, bench, check-setup.
"""

import json
import logging
import os
import sys
from datetime import datetime
from functools import wraps

import click
import numpy as np
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from adl_planner import (
    PLANNERS,
    PlannerGuardError,
    build_instance,
    load_instance,
    load_plan,
    plan_bnb,
    plan_table,
    save_instance,
    save_plan,
)
from baselines import plan_ad, plan_alm, plan_cba, simulate_execution, summary_row, write_summary_csv
from bench import BenchRunner
from config.adl_config import (
    DEFAULT_COSTS,
    CbaConfig,
    InsertionConfig,
    SimConfig,
    TrainConfig,
    get_adl_settings,
    load_experiment_config,
    normalize_mode,
    validate_adl_setup,
)
from coverage_sim import get_training_data, make_simulator, save_dataset
from mip_export import export_mip, solve_mip_with_ortools
from precond_model import (
    DimensionMismatchError,
    ModelFormatError,
    calibration_table,
    dataset_arrays,
    grad_check,
    load_model,
    save_model,
    train,
)
from task_domain import (
    CostVector,
    PretrainingError,
    SkillLibrary,
    generate_block_tasks,
    generate_grid_part_tasks,
    load_library,
    load_tasks,
    pretrain_library,
    save_library,
    save_tasks,
)

console = Console()
logger = logging.getLogger('adl.cli')

METHODS = list(PLANNERS) + ["ad", "cba", "alm"]
DOMAIN_ERRORS = (PlannerGuardError, DimensionMismatchError, ModelFormatError, PretrainingError,
                 FileNotFoundError, ValueError, RuntimeError)


def configure_logging(verbose: bool):
    level = logging.INFO if verbose else get_adl_settings().numeric_log_level
    logging.basicConfig(level=level, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


def domain_command(func):
    """Turn domain failures into a logged error and exit code 1."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except DOMAIN_ERRORS as e:
            logger.error(f"❌ {func.__name__.replace('_', '-')} failed: {e}")
            raise click.ClickException(str(e))
    return wrapper


def seed_option(func):
    return click.option('--seed', type=int, default=0, show_default=True, help='Random seed')(func)


def mode_option(func):
    return click.option('--mode', type=click.Choice(['mdp', 'literal', 'mdp_consistent', 'literal_paper']),
                        default='mdp', show_default=True, help='Cost semantics for taught tasks')(func)


def cost_options(func):
    for name in ('c_fail', 'c_demo', 'c_hum', 'c_rob'):
        func = click.option(f"--{name.replace('_', '-')}", name, type=click.FloatRange(min=0),
                            default=DEFAULT_COSTS[name], show_default=True)(func)
    return func


def sim_options(func):
    func = click.option('--tap-radius', type=click.FloatRange(min=0, min_open=True), default=3.0,
                        show_default=True, help='Tap effect radius in cm (grid parts)')(func)
    func = click.option('--max-taps', type=click.IntRange(min=1), default=500, show_default=True)(func)
    func = click.option('--coverage', type=click.FloatRange(0, 1, min_open=True), default=1.0,
                        show_default=True, help='Covered fraction needed for success')(func)
    func = click.option('--transfer-radius', type=click.FloatRange(min=0, min_open=True), default=4.0,
                        show_default=True, help='Slot transfer radius in cm (block tasks)')(func)
    return func


def detect_domain(tasks) -> str:
    return "grid_part" if tasks[0].is_grid_part else "block"


def simulator_for(tasks, seed, tap_radius, max_taps, coverage, transfer_radius):
    return make_simulator(
        detect_domain(tasks),
        SimConfig(tap_radius_cm=tap_radius, max_taps=max_taps, coverage_threshold=coverage, seed=seed),
        InsertionConfig(transfer_radius_cm=transfer_radius, seed=seed),
    )


def run_dir(out, prefix: str) -> str:
    if out:
        path = out
    else:
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        path = os.path.join(get_adl_settings().output_root, f"{prefix}_{timestamp}")
    os.makedirs(path, exist_ok=True)
    return path


@click.group()
@click.option('-v', '--verbose', is_flag=True, help='Log progress at INFO level')
def cli(verbose):
    """Act / Delegate / Learn planning toolkit."""
    configure_logging(verbose)


@cli.command('gen-tasks')
@click.option('--domain', type=click.Choice(['grid_part', 'block']), default='grid_part', show_default=True)
@click.option('--count', type=click.IntRange(min=1), required=True, help='Number of tasks')
@click.option('--families', type=click.IntRange(min=1), default=15, show_default=True,
              help='Shape families (grid_part)')
@click.option('--envs', type=click.IntRange(min=1), default=4, show_default=True,
              help='Environments (block)')
@seed_option
@cost_options
@click.option('-o', '--out', type=click.Path(dir_okay=False), default='tasks.json', show_default=True)
@domain_command
def gen_tasks(domain, count, families, envs, seed, c_rob, c_hum, c_demo, c_fail, out):
    """Generate a task set and write it as JSON."""
    costs = CostVector(c_rob=c_rob, c_hum=c_hum, c_demo=c_demo, c_fail=c_fail)
    if domain == 'grid_part':
        tasks = generate_grid_part_tasks(count, seed, families, costs=costs)
    else:
        tasks = generate_block_tasks(count, seed, envs, costs=costs)
    save_tasks(tasks, out)
    console.print(f"✅ {len(tasks)} {domain} tasks written to {out}")


@cli.command('pretrain')
@click.option('--tasks', 'tasks_file', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('-k', '--skills', type=click.IntRange(min=0), required=True, help='Number of skills to learn')
@click.option('--max-retries', type=click.IntRange(min=0), default=10, show_default=True)
@seed_option
@sim_options
@click.option('-o', '--out', type=click.Path(dir_okay=False), default='library.json', show_default=True)
@domain_command
def pretrain(tasks_file, skills, max_retries, seed, tap_radius, max_taps, coverage, transfer_radius, out):
    """Learn a skill library on uniformly sampled tasks."""
    tasks = load_tasks(tasks_file)
    sim = simulator_for(tasks, seed, tap_radius, max_taps, coverage, transfer_radius)
    library = pretrain_library(tasks, skills, seed, sim, max_retries=max_retries)
    save_library(library, out)
    console.print(f"✅ Library with {len(library)} skills written to {out} (trained on {library.provenance})")


@cli.command('train-preconds')
@click.option('--tasks', 'tasks_file', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('-m', '--eval-tasks', 'm', type=click.IntRange(min=1), default=150, show_default=True)
@click.option('-n', '--train-tasks', 'n', type=click.IntRange(min=1), default=150, show_default=True)
@click.option('--hidden', type=click.IntRange(min=1), default=32, show_default=True)
@click.option('--epochs', type=click.IntRange(min=1), default=200, show_default=True)
@click.option('--lr', type=click.FloatRange(min=0, min_open=True), default=1e-3, show_default=True)
@click.option('--batch-size', type=click.IntRange(min=1), default=32, show_default=True)
@click.option('--min-auc', type=click.FloatRange(0, 1), default=0.8, show_default=True,
              help='Fail with a calibration table when held-out AUC is below this')
@seed_option
@sim_options
@click.option('-o', '--out', type=click.Path(file_okay=False), default=None,
              help='Output directory (default: <output root>/train_<timestamp>)')
@domain_command
def train_preconds(tasks_file, m, n, hidden, epochs, lr, batch_size, min_auc, seed,
                   tap_radius, max_taps, coverage, transfer_radius, out):
    """Collect simulated transfer labels and train the precondition model."""
    tasks = load_tasks(tasks_file)
    sim = simulator_for(tasks, seed, tap_radius, max_taps, coverage, transfer_radius)
    out_dir = run_dir(out, "train")

    dataset = get_training_data(m, n, tasks, sim, seed=seed)
    save_dataset(dataset, os.path.join(out_dir, "training_data.csv"))

    cfg = TrainConfig(hidden_size=hidden, epochs=epochs, learning_rate=lr, batch_size=batch_size, seed=seed)
    model = train(dataset, cfg)
    save_model(model, os.path.join(out_dir, "model.json"))

    X, y = dataset_arrays(dataset)
    grad_error = grad_check(model, (X[0], y[0]), epsilon=1e-5, weight_decay=cfg.weight_decay)

    report = dict(model.report.to_dict(), grad_check_max_rel_error=grad_error, m=m, n=n, seed=seed)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report, f, indent=2)

    table = Table(title="Precondition model")
    table.add_column("metric")
    table.add_column("value", justify="right")
    for key, value in report.items():
        table.add_row(key, f"{value:.6g}" if isinstance(value, float) else str(value))
    console.print(table)

    auc = model.report.val_auc
    if np.isnan(auc):
        logger.warning("Held-out AUC undefined (single class in validation rows); quality gate skipped")
    elif auc < min_auc:
        calib = calibration_table(model, dataset)
        console.print(calib.to_string(index=False))
        raise click.ClickException(f"Held-out AUC {auc:.4f} below required {min_auc}")
    console.print(f"✅ Dataset, model and report written to {out_dir}")


def _instance_from_files(tasks_file, model_file, library_file, mode):
    tasks = load_tasks(tasks_file)
    model = load_model(model_file)
    library = load_library(library_file) if library_file else SkillLibrary()
    return build_instance(tasks, library, model, normalize_mode(mode))


def _resolve_instance(instance_file, tasks_file, model_file, library_file, mode):
    if instance_file:
        return load_instance(instance_file)
    if not (tasks_file and model_file):
        raise click.UsageError("Provide --instance, or --tasks together with --model")
    return _instance_from_files(tasks_file, model_file, library_file, mode)


def instance_inputs(func):
    func = click.option('--library', 'library_file', type=click.Path(exists=True, dir_okay=False),
                        help='Pretrained skill library JSON (default: empty)')(func)
    func = click.option('--model', 'model_file', type=click.Path(exists=True, dir_okay=False))(func)
    func = click.option('--tasks', 'tasks_file', type=click.Path(exists=True, dir_okay=False))(func)
    func = click.option('--instance', 'instance_file', type=click.Path(exists=True, dir_okay=False),
                        help='Saved instance JSON (instead of tasks + model)')(func)
    return func


@cli.command('plan')
@instance_inputs
@click.option('--method', type=click.Choice(METHODS), default='adl-bnb', show_default=True)
@click.option('--gap', type=click.FloatRange(min=0), default=0.0, show_default=True)
@click.option('--theta', type=click.FloatRange(0, 1), default=0.2, show_default=True, help='CBA threshold')
@mode_option
@click.option('--instance-out', type=click.Path(dir_okay=False), help='Also save the built instance')
@click.option('-o', '--out', type=click.Path(dir_okay=False), default='plan.json', show_default=True)
@domain_command
def plan(instance_file, tasks_file, model_file, library_file, method, gap, theta, mode, instance_out, out):
    """Plan a task sequence with ADL or a baseline."""
    instance = _resolve_instance(instance_file, tasks_file, model_file, library_file, mode)
    if instance_out:
        save_instance(instance, instance_out)

    if method == 'adl-bnb':
        result = PLANNERS[method](instance, gap)
    elif method in PLANNERS:
        result = PLANNERS[method](instance)
    elif method == 'cba':
        result = plan_cba(instance, CbaConfig(theta=theta))
    elif method == 'ad':
        result = plan_ad(instance)
    else:
        result = plan_alm(instance)
    save_plan(result, out)

    frame = plan_table(instance, result)
    table = Table(title=f"{result.meta.method} plan ({instance.mode})")
    for column in frame.columns:
        table.add_column(column, justify="left" if column in ("action", "serving") else "right")
    for row in frame.itertuples(index=False):
        table.add_row(str(row.task_id), row.action, row.serving,
                      "" if np.isnan(row.p_i) else f"{row.p_i:.4f}", f"{row.expected_cost:.4f}")
    console.print(table)
    console.print(f"Objective {result.objective:.6f} (lower bound {result.meta.lower_bound:.6f}, "
                  f"{result.meta.nodes_expanded} nodes, {result.meta.wall_time_ms:.1f} ms)")
    console.print(f"✅ Plan written to {out}")


@cli.command('export-mip')
@instance_inputs
@mode_option
@click.option('--cross-check', is_flag=True, help='Solve with OR-Tools and compare against branch and bound')
@click.option('-o', '--out', type=click.Path(dir_okay=False), default='adl.lp', show_default=True)
@domain_command
def export_mip_cmd(instance_file, tasks_file, model_file, library_file, mode, cross_check, out):
    """Write the linearized MIP in LP format."""
    instance = _resolve_instance(instance_file, tasks_file, model_file, library_file, mode)
    export_mip(instance, out)
    console.print(f"✅ LP file written to {out}")

    if cross_check:
        external = solve_mip_with_ortools(instance)
        native = plan_bnb(instance, 0.0).objective
        console.print(f"OR-Tools {external:.6f} vs branch and bound {native:.6f} "
                      f"(difference {external - native:+.2e})")
        if abs(external - native) > 1e-6 * max(1.0, abs(native)):
            raise click.ClickException("MIP cross-check disagrees with branch and bound")


@cli.command('simulate')
@click.option('--instance', 'instance_file', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--plan', 'plan_file', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--trials', type=click.IntRange(min=1), default=None, help='Default: ADL_MC_TRIALS')
@seed_option
@click.option('-o', '--out', type=click.Path(dir_okay=False), default='simulation.csv', show_default=True)
@domain_command
def simulate(instance_file, plan_file, trials, seed, out):
    """Monte Carlo execution of a saved plan."""
    instance = load_instance(instance_file)
    saved = load_plan(plan_file)
    trials = trials or get_adl_settings().mc_trials
    _, summary = simulate_execution(instance, saved, trials, seed, keep_traces=False)
    write_summary_csv([summary_row(saved.meta.method, seed, saved, summary)], out)
    console.print(f"Expected {saved.objective:.4f}, realized {summary.realized_mean:.4f} "
                  f"± {summary.realized_std_error:.4f} over {trials} trials")
    console.print(f"✅ Summary written to {out}")


@cli.command('bench')
@click.argument('config_file', type=click.Path(exists=True, dir_okay=False))
@click.option('-o', '--out', type=click.Path(file_okay=False), default=None,
              help='Output directory (default: <output root>/bench_<timestamp>_<domain>)')
@click.pass_context
@domain_command
def bench(ctx, config_file, out):
    """Run the ADL vs baselines experiment described by a JSON/YAML config."""
    try:
        config = load_experiment_config(config_file)
    except ValidationError as e:
        console.print(f"[red]❌ Invalid experiment config {config_file}:[/red]")
        for error in e.errors():
            field = ".".join(str(part) for part in error["loc"]) or "(root)"
            console.print(f"  • {field}: {error['msg']}")
        ctx.exit(2)

    runner = BenchRunner(config, output_dir=out)
    runner.run()
    runner.print_summary(console)
    if runner.failures:
        for failure in runner.failures:
            logger.error(f"❌ {failure}")
        ctx.exit(1)


@cli.command('check-setup')
def check_setup():
    """Report configuration and optional solver availability."""
    status = validate_adl_setup()
    for key, value in status.items():
        console.print(f"{key}: {value}")
    if status['status'] != 'success':
        sys.exit(1)


if __name__ == "__main__":
    cli()
