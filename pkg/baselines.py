"""
Baseline Policies and Execution Simulator

AD (act or delegate), CBA(theta) (confidence-based autonomy) and ALM
(act-learn myopic) emit fixed action sequences in the planner's own cost
model. simulate_execution rolls a plan out with Bernoulli robot outcomes to
validate expected costs by Monte Carlo.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from adl_planner import (
    Action,
    Plan,
    PlanInstance,
    SolverMeta,
    make_plan,
    relaxed_bound,
    success_probabilities,
    tie_tolerance,
)
from config.adl_config import CbaConfig

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["method", "seed", "objective", "realized_mean", "demos", "delegations",
                   "interventions", "failures"]


def _learn_cost(instance: PlanInstance, i: int, p: float) -> float:
    cost = float(instance.c_demo[i])
    if instance.literal:
        cost += float(instance.c_fail[i]) * (1.0 - max(p, float(instance.rho_diag[i])))
    return cost


def _baseline_plan(instance: PlanInstance, actions: List[Action], method: str, start: float) -> Plan:
    n = instance.n
    plan = make_plan(instance, actions, SolverMeta(method=method, lower_bound=0.0, nodes_expanded=0))
    plan.meta.lower_bound = min(plan.objective, relaxed_bound(instance, np.zeros(n, dtype=bool),
                                                              np.ones(n, dtype=bool)))
    plan.meta.gap = (plan.objective - plan.meta.lower_bound) / max(abs(plan.objective), 1e-12)
    plan.meta.wall_time_ms = (time.perf_counter() - start) * 1000.0
    return plan

def plan_ad(instance: PlanInstance) -> Plan:
    """Act or delegate each task on its own; never teaches, so only pretrained skills count."""
    start = time.perf_counter()
    actions = []
    for i in range(instance.n):
        act = float(instance.c_rob[i] + (1.0 - instance.rho0[i]) * instance.c_fail[i])
        hum = float(instance.c_hum[i])
        actions.append(Action.ACT if act <= hum + tie_tolerance(act, hum) else Action.DELEGATE)
    return _baseline_plan(instance, actions, "ad", start)


def plan_cba(instance: PlanInstance, cfg: Optional[CbaConfig] = None) -> Plan:
    """
    Confidence-based autonomy: act when the running best success is strictly
    above theta, otherwise ask for a demonstration. Demonstrated skills serve
    later tasks; never delegates.
    """
    cfg = cfg or CbaConfig()
    start = time.perf_counter()
    actions: List[Action] = []
    for i in range(instance.n):
        p = float(success_probabilities(instance, actions + [Action.ACT] * (instance.n - i))[i])
        actions.append(Action.ACT if p > cfg.theta else Action.LEARN)
    return _baseline_plan(instance, actions, f"cba({cfg.theta:g})", start)


def plan_alm(instance: PlanInstance) -> Plan:
    """Act-learn myopic: per task, the cheaper of acting and teaching right now; never delegates."""
    start = time.perf_counter()
    actions: List[Action] = []
    for i in range(instance.n):
        p = float(success_probabilities(instance, actions + [Action.ACT] * (instance.n - i))[i])
        act = float(instance.c_rob[i] + (1.0 - p) * instance.c_fail[i])
        learn = _learn_cost(instance, i, p)
        actions.append(Action.ACT if act <= learn + tie_tolerance(act, learn) else Action.LEARN)
    return _baseline_plan(instance, actions, "alm", start)


# ============================================================================
# EXECUTION SIMULATION
# ============================================================================

@dataclass
class ExecutionTrace:
    actions: List[Action]
    outcomes: List[Optional[bool]]
    costs: List[float]
    total: float
    seed: int
    trial: int


@dataclass
class ExecutionSummary:
    trials: int
    seed: int
    expected: float
    realized_mean: float
    realized_std_error: float
    demos: int
    delegations: int
    failures: float
    interventions: float
    per_trial: np.ndarray = field(repr=False, default=None)


def simulate_execution(instance: PlanInstance, plan: Plan, trials: int, seed: int,
                       keep_traces: bool = True) -> Tuple[List[ExecutionTrace], ExecutionSummary]:
    """
    Roll the plan out `trials` times with independent Bernoulli robot outcomes.

    A failed robot attempt is completed by a human at c_fail on top of c_rob.
    In literal_paper mode a taught task can also fail, with the success of the
    best skill including its own.

    Returns:
        (traces, summary); traces is empty when keep_traces is False
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")

    actions = plan.actions
    n = instance.n
    p = success_probabilities(instance, actions)
    act = np.array([a == Action.ACT for a in actions])
    learn = np.array([a == Action.LEARN for a in actions])
    delegate = np.array([a == Action.DELEGATE for a in actions])

    attempt_p = np.where(learn, np.maximum(p, instance.rho_diag), p)
    risky = act | (learn if instance.literal else np.zeros(n, dtype=bool))

    rng = np.random.default_rng(seed)
    draws = rng.random((trials, n))
    failed = risky[None, :] & (draws >= attempt_p[None, :])

    base = np.where(act, instance.c_rob, np.where(delegate, instance.c_hum, instance.c_demo))
    costs = base[None, :] + failed * instance.c_fail[None, :]
    totals = costs.sum(axis=1)

    failures_per_trial = failed.sum(axis=1)
    delegations = int(delegate.sum())
    std_error = float(totals.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    summary = ExecutionSummary(
        trials=trials,
        seed=seed,
        expected=plan.objective,
        realized_mean=float(totals.mean()),
        realized_std_error=std_error,
        demos=int(learn.sum()),
        delegations=delegations,
        failures=float(failures_per_trial.mean()),
        interventions=delegations + float(failures_per_trial.mean()),
        per_trial=totals,
    )

    traces = []
    if keep_traces:
        for t in range(trials):
            outcomes = [None if not risky[i] else not bool(failed[t, i]) for i in range(n)]
            traces.append(ExecutionTrace(actions=list(actions), outcomes=outcomes,
                                         costs=[float(c) for c in costs[t]], total=float(totals[t]),
                                         seed=seed, trial=t))

    logger.info(f"Simulated {trials} executions of {plan.meta.method}: mean {summary.realized_mean:.3f} "
                f"(expected {plan.objective:.3f}, s.e. {std_error:.3f})")
    return traces, summary


def summary_row(method: str, seed: int, plan: Plan, summary: ExecutionSummary) -> Dict:
    return {
        "method": method,
        "seed": seed,
        "objective": plan.objective,
        "realized_mean": summary.realized_mean,
        "demos": summary.demos,
        "delegations": summary.delegations,
        "interventions": summary.interventions,
        "failures": summary.failures,
    }


def write_summary_csv(rows: Sequence[Dict], path: str):
    pd.DataFrame(list(rows), columns=SUMMARY_COLUMNS).to_csv(path, index=False)
    logger.info(f"Execution summary saved: {path}")


BASELINES = {
    "ad": plan_ad,
    "alm": plan_alm,
}
