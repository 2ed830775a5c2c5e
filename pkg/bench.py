#!/usr/bin/env python3
"""
ADL Benchmark Harness

Runs ADL and the baselines over pretraining levels and seeds:
ground task set -> simulated precondition data -> precondition model ->
per (cost setting, level, seed) row: test sequence, pretrained library,
instance, every method, Monte Carlo execution. Writes per-row results,
per-level aggregates and ADL-vs-baseline deltas as CSV.
"""

import dataclasses
import json
import logging
import os
import traceback
from datetime import datetime
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from adl_planner import Plan, build_instance, plan_bnb, plan_exhaustive, plan_greedy_facility, tie_tolerance
from baselines import plan_ad, plan_alm, plan_cba, simulate_execution
from config.adl_config import CbaConfig, CostConfig, ExperimentConfig, get_adl_settings
from coverage_sim import get_training_data, make_simulator, save_dataset
from precond_model import save_model, train
from task_domain import CostVector, generate_block_tasks, generate_grid_part_tasks, pretrain_library

RESULT_COLUMNS = ["level", "seed", "method", "objective", "realized_mean", "demos", "delegations",
                  "failures", "wall_time_ms", "cost_index", "interventions", "realized_std_error",
                  "greedy_ratio"]
ORACLE_CHECK_MAX_TASKS = 12


class DominanceViolation(RuntimeError):
    """ADL returned a worse objective than a baseline on the same instance."""


class OracleMismatch(RuntimeError):
    """Branch and bound disagreed with exhaustive search."""


def seed_streams(root_seed: int) -> Dict[str, int]:
    """Independent domain / model / bench streams derived from one root seed."""
    domain, model, bench = np.random.SeedSequence(root_seed).spawn(3)
    return {
        "domain": int(domain.generate_state(1)[0]),
        "model": int(model.generate_state(1)[0]),
        "bench": int(bench.generate_state(1)[0]),
    }


class BenchRunner:
    """
    Experiment harness comparing ADL against AD, CBA(theta) and ALM.
    """

    def __init__(self, config: ExperimentConfig, output_dir: Optional[str] = None):
        self.logger = logging.getLogger(__name__)
        self.config = config
        settings = get_adl_settings()

        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        self.output_dir = output_dir or config.output_dir or \
            os.path.join(settings.output_root, f"bench_{timestamp}_{config.domain}")
        os.makedirs(self.output_dir, exist_ok=True)

        self.streams = seed_streams(config.root_seed)
        self.mc_trials = config.mc_trials or settings.mc_trials
        self.sim = make_simulator(config.domain, config.sim, config.insertion)

        self.ground = []
        self.model = None
        self.results = pd.DataFrame(columns=RESULT_COLUMNS)
        self.failures: List[str] = []

        self.logger.info(f"Bench configured: domain={config.domain}, levels={config.pretrain_levels}, "
                         f"seeds={len(config.seeds)}, trials={self.mc_trials}")
        self.logger.info(f"Output directory: {self.output_dir}")

    def _generate_ground(self, costs: CostVector):
        cfg = self.config
        if cfg.domain == "grid_part":
            return generate_grid_part_tasks(cfg.ground_count, self.streams["domain"], cfg.families, costs=costs)
        return generate_block_tasks(cfg.ground_count, self.streams["domain"], cfg.env_count, costs=costs)

    def prepare(self):
        """Generate the ground set and train the precondition model on simulated labels."""
        cfg = self.config
        self.ground = self._generate_ground(CostVector(**cfg.costs.model_dump()))

        self.logger.info(f"Collecting training data (m={cfg.train_m}, n={cfg.train_n})...")
        dataset = get_training_data(cfg.train_m, cfg.train_n, self.ground, self.sim, seed=self.streams["model"])
        train_cfg = cfg.train.model_copy(update={"seed": self.streams["model"]})
        self.model = train(dataset, train_cfg)

        save_dataset(dataset, os.path.join(self.output_dir, "training_data.csv"))
        save_model(self.model, os.path.join(self.output_dir, "model.json"))

    def cost_settings(self) -> List[CostConfig]:
        return [self.config.costs] + list(self.config.cost_sweep)

    def run(self) -> pd.DataFrame:
        """Run every (cost setting, level, seed) row; returns the per-method results frame."""
        self.logger.info("=" * 80)
        self.logger.info("STARTING ADL BENCHMARK")
        self.logger.info("=" * 80)

        if self.model is None:
            self.prepare()

        rows = []
        for cost_index, costs in enumerate(self.cost_settings()):
            cost_vector = CostVector(**costs.model_dump())
            ground = [dataclasses.replace(task, costs=cost_vector) for task in self.ground]
            for level in self.config.pretrain_levels:
                for seed in self.config.seeds:
                    try:
                        rows.extend(self._run_row(ground, cost_index, level, seed))
                    except Exception as e:
                        message = f"row (cost={cost_index}, level={level}, seed={seed}): {e}"
                        self.failures.append(message)
                        self.logger.error(f"❌ Bench {message}")
                        self.logger.error(f"Traceback: {traceback.format_exc()}")

        self.results = pd.DataFrame(rows, columns=RESULT_COLUMNS)
        self._save_results()
        return self.results

    def _run_row(self, ground, cost_index: int, level: int, seed: int) -> List[Dict]:
        cfg = self.config
        rng = np.random.default_rng([self.streams["bench"], cost_index, level, seed])
        test_idx = rng.choice(len(ground), size=cfg.n_tasks, replace=False)
        test_tasks = [ground[int(i)] for i in test_idx]

        if cfg.pretrain_overlap == "exclude":
            held_out = set(int(i) for i in test_idx)
            pool = [task for i, task in enumerate(ground) if i not in held_out]
        else:
            pool = list(ground)
        library_seed = int(rng.integers(0, 2 ** 31 - 1))
        library = pretrain_library(pool, level, library_seed, self.sim)
        mc_seed = int(rng.integers(0, 2 ** 31 - 1))

        instance = build_instance(test_tasks, library, self.model, cfg.mode)

        adl = plan_bnb(instance, cfg.gap_tolerance)
        if cfg.check_oracles and instance.n <= ORACLE_CHECK_MAX_TASKS:
            oracle = plan_exhaustive(instance)
            if abs(oracle.objective - adl.objective) > 1e-9 * max(1.0, abs(oracle.objective)) \
                    and cfg.gap_tolerance == 0:
                raise OracleMismatch(f"bnb {adl.objective} vs exhaustive {oracle.objective}")

        plans: Dict[str, Plan] = {"adl": adl, "greedy": plan_greedy_facility(instance), "ad": plan_ad(instance)}
        for theta in cfg.cba_thetas:
            plans[f"cba({theta:g})"] = plan_cba(instance, CbaConfig(theta=theta))
        plans["alm"] = plan_alm(instance)

        if cfg.gap_tolerance == 0:
            for method, plan in plans.items():
                if method in ("adl", "greedy"):
                    continue
                if adl.objective > plan.objective + tie_tolerance(adl.objective, plan.objective):
                    raise DominanceViolation(f"ADL {adl.objective:.6f} > {method} {plan.objective:.6f}")

        rows = []
        for method, plan in plans.items():
            _, summary = simulate_execution(instance, plan, self.mc_trials, mc_seed, keep_traces=False)
            rows.append({
                "level": level,
                "seed": seed,
                "method": method,
                "objective": plan.objective,
                "realized_mean": summary.realized_mean,
                "demos": plan.demos,
                "delegations": plan.delegations,
                "failures": summary.failures,
                "wall_time_ms": plan.meta.wall_time_ms,
                "cost_index": cost_index,
                "interventions": summary.interventions,
                "realized_std_error": summary.realized_std_error,
                "greedy_ratio": plans["greedy"].objective / adl.objective if method == "greedy" and adl.objective > 0
                else float("nan"),
            })

        self.logger.info(f"✅ Row (cost={cost_index}, level={level}, seed={seed}): ADL {adl.objective:.2f}, "
                         f"greedy {plans['greedy'].objective:.2f}, AD {plans['ad'].objective:.2f}, "
                         f"ALM {plans['alm'].objective:.2f}")
        return rows

    # ------------------------------------------------------------------
    # Aggregation and output
    # ------------------------------------------------------------------

    def summary(self) -> pd.DataFrame:
        if self.results.empty:
            return pd.DataFrame()
        return (self.results
                .groupby(["cost_index", "level", "method"], sort=True)
                .agg(objective=("objective", "mean"),
                     realized_mean=("realized_mean", "mean"),
                     demos=("demos", "mean"),
                     delegations=("delegations", "mean"),
                     failures=("failures", "mean"),
                     greedy_ratio=("greedy_ratio", "mean"),
                     rows=("seed", "size"))
                .reset_index())

    def deltas(self) -> pd.DataFrame:
        """Per (cost setting, level): mean baseline objective minus mean ADL objective."""
        summary = self.summary()
        if summary.empty:
            return pd.DataFrame()
        pivot = summary.pivot_table(index=["cost_index", "level"], columns="method", values="objective")
        baselines = [c for c in pivot.columns if c not in ("adl", "greedy")]
        deltas = pivot[baselines].sub(pivot["adl"], axis=0)
        deltas["best_baseline_gap"] = pivot[baselines].min(axis=1) - pivot["adl"]
        return deltas.reset_index()

    def _save_results(self):
        results_file = os.path.join(self.output_dir, "results.csv")
        self.results.to_csv(results_file, index=False)
        self.summary().to_csv(os.path.join(self.output_dir, "summary.csv"), index=False)
        self.deltas().to_csv(os.path.join(self.output_dir, "deltas.csv"), index=False)
        with open(os.path.join(self.output_dir, "config.json"), "w") as f:
            json.dump({"config": self.config.model_dump(), "streams": self.streams}, f, indent=2)
        self.logger.info(f"Results saved: {results_file}")

    def print_summary(self, console: Optional[Console] = None):
        console = console or Console()
        summary = self.summary()

        table = Table(title=f"ADL bench ({self.config.domain}, mode {self.config.mode})")
        for column in ("cost", "level", "method", "objective", "realized", "demos", "delegations", "failures"):
            table.add_column(column, justify="right" if column not in ("method",) else "left")
        for row in summary.itertuples(index=False):
            table.add_row(str(row.cost_index), str(row.level), row.method, f"{row.objective:.2f}",
                          f"{row.realized_mean:.2f}", f"{row.demos:.2f}", f"{row.delegations:.2f}",
                          f"{row.failures:.2f}")
        console.print(table)

        deltas = self.deltas()
        if not deltas.empty:
            console.print(f"Best-baseline gap per level: "
                          + ", ".join(f"L{int(r.level)}={r.best_baseline_gap:.2f}" for r in deltas.itertuples()))
            greedy = summary[summary["method"] == "greedy"]["greedy_ratio"]
            console.print(f"Mean greedy/ADL ratio: {greedy.mean():.4f}")

        if self.failures:
            console.print(f"[red]❌ {len(self.failures)} row(s) failed[/red]")
        else:
            console.print(f"✅ Results written to {self.output_dir}")
