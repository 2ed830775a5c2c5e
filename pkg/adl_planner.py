"""
ADL Planner

Plans a fixed task sequence with three actions per task: the robot acts with
its best skill, the task is delegated to a human, or the human teaches the
robot a new skill on the task (which also completes it). A taught skill can
serve every later task, with success probability taken from the
precondition model.

Solvers:
- plan_exhaustive: enumerate every set of taught tasks (oracle, n <= 20)
- plan_ssp_dp: memoized dynamic program over (task index, success vector)
- plan_bnb: best-first branch and bound on the teach decisions
- plan_greedy_facility: greedy facility-location heuristic
"""

import heapq
import json
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config.adl_config import normalize_mode
from precond_model import PreconditionModel
from task_domain import CostVector, SkillLibrary, Task

logger = logging.getLogger(__name__)

ORACLE_MAX_TASKS = 20
PRETRAINED = "pretrained"


class PlannerGuardError(ValueError):
    """An oracle planner was asked to solve an instance above its size guard."""


class Action(str, Enum):
    ACT = "Act"
    DELEGATE = "Delegate"
    LEARN = "Learn"


# Tie-break order on equal expected cost
ACTION_RANK = {Action.ACT: 0, Action.DELEGATE: 1, Action.LEARN: 2}


def tie_tolerance(a: float, b: float) -> float:
    return 1e-9 * max(abs(a), abs(b)) + 1e-12


@dataclass
class PlanInstance:
    """
    Planner input.

    rho[i, j] is the predicted success on task i of a skill taught on task j,
    meaningful for j <= i only; entries above the diagonal are NaN.
    """
    rho0: np.ndarray
    rho: np.ndarray
    costs: List[CostVector]
    mode: str = "mdp_consistent"
    task_ids: Optional[List[int]] = None

    def __post_init__(self):
        self.rho0 = np.asarray(self.rho0, dtype=float)
        self.rho = np.array(self.rho, dtype=float)
        self.mode = normalize_mode(self.mode)
        n = len(self.rho0)
        if self.rho.shape != (n, n):
            raise ValueError(f"rho must be {n}x{n}, got {self.rho.shape}")
        if len(self.costs) != n:
            raise ValueError(f"Expected {n} cost vectors, got {len(self.costs)}")
        self.rho[np.triu_indices(n, k=1)] = np.nan
        lower = self.rho[np.tril_indices(n)]
        for name, values in (("rho0", self.rho0), ("rho", lower)):
            if not np.all((values >= 0.0) & (values <= 1.0)):
                raise ValueError(f"{name} entries must lie in [0, 1]")
        if self.task_ids is None:
            self.task_ids = list(range(n))

        self.c_rob = np.array([c.c_rob for c in self.costs])
        self.c_hum = np.array([c.c_hum for c in self.costs])
        self.c_demo = np.array([c.c_demo for c in self.costs])
        self.c_fail = np.array([c.c_fail for c in self.costs])
        # rho[i, j] for j < i, zero elsewhere
        self.rho_strict = np.where(np.tri(n, k=-1, dtype=bool), np.nan_to_num(self.rho), 0.0)
        self.rho_diag = np.diag(np.nan_to_num(self.rho)).copy()

    @property
    def n(self) -> int:
        return len(self.rho0)

    @property
    def literal(self) -> bool:
        return self.mode == "literal_paper"

    def scaled(self, factor: float) -> "PlanInstance":
        return PlanInstance(self.rho0, self.rho, [c.scaled(factor) for c in self.costs], self.mode,
                            list(self.task_ids))


@dataclass
class SolverMeta:
    method: str
    lower_bound: float
    gap: float = 0.0
    nodes_expanded: int = 0
    wall_time_ms: float = 0.0
    memo_hits: int = 0


@dataclass
class Plan:
    actions: List[Action]
    serving: List[Optional[Union[str, int]]]
    objective: float
    meta: SolverMeta

    @property
    def demos(self) -> int:
        return sum(1 for a in self.actions if a == Action.LEARN)

    @property
    def delegations(self) -> int:
        return sum(1 for a in self.actions if a == Action.DELEGATE)


# ============================================================================
# INSTANCE CONSTRUCTION
# ============================================================================

def build_instance(tasks: Sequence[Task], library: SkillLibrary, model: PreconditionModel,
                   mode: str = "mdp_consistent") -> PlanInstance:
    """
    Build the planning instance for a task sequence.

    rho0[i] is the best predicted success over the pretrained skills (0 for an
    empty library); rho[i, j] = P(task j, task i) for j <= i.
    """
    if not tasks:
        raise ValueError("Cannot build an instance for an empty task sequence")

    features = np.stack([np.asarray(task.features, dtype=float) for task in tasks])
    n = len(tasks)

    rho0 = np.zeros(n)
    for skill in library.skills:
        if not skill.train_features:
            raise ValueError(f"Skill trained on task {skill.trained_on} has no training features")
        probs = model.predict_pairs(np.asarray(skill.train_features)[None, :], features)
        rho0 = np.maximum(rho0, probs)

    rows, cols = np.tril_indices(n)
    rho = np.full((n, n), np.nan)
    rho[rows, cols] = model.predict_pairs(features[cols], features[rows])

    logger.info(f"Built {mode} instance: n={n}, library={len(library)}, mean rho0={rho0.mean():.3f}")
    return PlanInstance(rho0=rho0, rho=rho, costs=[task.costs for task in tasks], mode=mode,
                        task_ids=[task.id for task in tasks])


# ============================================================================
# COST MODEL
# ============================================================================

def _parse_actions(actions: Sequence) -> List[Action]:
    return [a if isinstance(a, Action) else Action(a) for a in actions]


def success_probabilities(instance: PlanInstance, actions: Sequence) -> np.ndarray:
    """Best available success per task: pretrained skills or skills taught on earlier tasks."""
    learn = np.array([a == Action.LEARN for a in _parse_actions(actions)], dtype=float)
    return np.maximum(instance.rho0, (instance.rho_strict * learn[None, :]).max(axis=1, initial=0.0))


def task_costs(instance: PlanInstance, actions: Sequence) -> np.ndarray:
    """Expected cost contribution of each task under the plan."""
    actions = _parse_actions(actions)
    if len(actions) != instance.n:
        raise ValueError(f"Expected {instance.n} actions, got {len(actions)}")
    p = success_probabilities(instance, actions)
    learn_cost = instance.c_demo.copy()
    if instance.literal:
        learn_cost = learn_cost + instance.c_fail * (1.0 - np.maximum(p, instance.rho_diag))
    per_action = {
        Action.ACT: instance.c_rob + (1.0 - p) * instance.c_fail,
        Action.DELEGATE: instance.c_hum,
        Action.LEARN: learn_cost,
    }
    return np.array([per_action[a][i] for i, a in enumerate(actions)])


def expected_plan_cost(instance: PlanInstance, actions: Sequence) -> float:
    return float(math.fsum(task_costs(instance, actions)))


def serving_skills(instance: PlanInstance, actions: Sequence) -> List[Optional[Union[str, int]]]:
    """Source of the best skill for each Act task (pretrained wins ties, then the earliest demo)."""
    actions = _parse_actions(actions)
    learned = [j for j, a in enumerate(actions) if a == Action.LEARN]
    serving = []
    for i, action in enumerate(actions):
        if action != Action.ACT:
            serving.append(None)
            continue
        best, source = instance.rho0[i], PRETRAINED
        for j in learned:
            if j < i and instance.rho[i, j] > best:
                best, source = instance.rho[i, j], j
        serving.append(source)
    return serving


def make_plan(instance: PlanInstance, actions: Sequence, meta: SolverMeta) -> Plan:
    actions = _parse_actions(actions)
    return Plan(actions=actions, serving=serving_skills(instance, actions),
                objective=expected_plan_cost(instance, actions), meta=meta)


def _evaluate_subsets(instance: PlanInstance, learn: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closed-form completion of each teach set (rows of `learn`).

    Non-taught tasks take the cheaper of acting and delegating (acting on
    ties). Returns (totals, action ranks).
    """
    p = np.broadcast_to(instance.rho0, learn.shape).copy()
    for j in range(instance.n - 1):
        p = np.maximum(p, learn[:, j:j + 1] * instance.rho_strict[None, :, j])

    act = instance.c_rob + (1.0 - p) * instance.c_fail
    hum = np.broadcast_to(instance.c_hum, learn.shape)
    act_wins = act <= hum + 1e-9 * np.maximum(np.abs(act), np.abs(hum)) + 1e-12
    learn_cost = np.broadcast_to(instance.c_demo, learn.shape)
    if instance.literal:
        learn_cost = learn_cost + instance.c_fail * (1.0 - np.maximum(p, instance.rho_diag))

    costs = np.where(learn, learn_cost, np.where(act_wins, act, hum))
    ranks = np.where(learn, 2, np.where(act_wins, 0, 1))
    return costs.sum(axis=1), ranks


def _ranks_to_actions(ranks: Sequence[int]) -> List[Action]:
    by_rank = {rank: action for action, rank in ACTION_RANK.items()}
    return [by_rank[int(r)] for r in ranks]


def complete_teach_set(instance: PlanInstance, learn_mask: Sequence[bool]) -> Tuple[float, List[Action]]:
    totals, ranks = _evaluate_subsets(instance, np.asarray(learn_mask, dtype=bool)[None, :])
    return float(totals[0]), _ranks_to_actions(ranks[0])


def relaxed_bound(instance: PlanInstance, taught: Sequence[bool], open_: Sequence[bool]) -> float:
    """
    Admissible bound for a branch-and-bound node.

    `taught` tasks pay their teach cost, every other task pays the cheapest
    of its allowed actions with success computed as if every taught or
    still-open earlier task were taught for free.
    """
    taught = np.asarray(taught, dtype=bool)
    open_ = np.asarray(open_, dtype=bool)
    available = (taught | open_).astype(float)
    p = np.maximum(instance.rho0, (instance.rho_strict * available[None, :]).max(axis=1, initial=0.0))

    act = instance.c_rob + (1.0 - p) * instance.c_fail
    learn_cost = instance.c_demo.copy()
    if instance.literal:
        learn_cost = learn_cost + instance.c_fail * (1.0 - np.maximum(p, instance.rho_diag))
    cheapest = np.minimum(act, instance.c_hum)
    costs = np.where(taught, learn_cost, np.where(open_, np.minimum(cheapest, learn_cost), cheapest))
    return float(costs.sum())


# ============================================================================
# ORACLES
# ============================================================================

def plan_exhaustive(instance: PlanInstance, chunk_size: int = 1 << 14) -> Plan:
    """
    Enumerate every teach set and complete each one in closed form.

    Among optimal plans (within tie tolerance) the lexicographically smallest
    action sequence under Act < Delegate < Learn is returned.
    """
    n = instance.n
    if n > ORACLE_MAX_TASKS:
        raise PlannerGuardError(f"plan_exhaustive is limited to n <= {ORACLE_MAX_TASKS} "
                                f"(got n={n}); use plan_bnb for larger instances")
    start = time.perf_counter()
    bits = np.arange(n)
    totals = np.empty(1 << n)
    for lo in range(0, 1 << n, chunk_size):
        codes = np.arange(lo, min(lo + chunk_size, 1 << n))
        learn = ((codes[:, None] >> bits) & 1).astype(bool)
        totals[codes], _ = _evaluate_subsets(instance, learn)

    best = float(totals.min())
    candidates = np.flatnonzero(totals <= best + tie_tolerance(best, best))
    learn = ((candidates[:, None] >> bits) & 1).astype(bool)
    _, ranks = _evaluate_subsets(instance, learn)
    chosen = ranks[np.lexsort(ranks.T[::-1])[0]]

    plan = make_plan(instance, _ranks_to_actions(chosen),
                      SolverMeta(method="adl-exhaustive", lower_bound=0.0, nodes_expanded=1 << n))
    plan.meta.lower_bound = plan.objective
    plan.meta.wall_time_ms = (time.perf_counter() - start) * 1000.0
    logger.info(f"✅ Exhaustive search over {1 << n} teach sets: objective {plan.objective:.4f}")
    return plan


def plan_ssp_dp(instance: PlanInstance) -> Plan:
    """
    Dynamic program over states (k, success vector of tasks k..n-1).

    Each action is charged its expected cost, so transitions are
    deterministic; states reached through different teach sets that leave
    the same future success vector share one memo entry.
    """
    n = instance.n
    if n > ORACLE_MAX_TASKS:
        raise PlannerGuardError(f"plan_ssp_dp is limited to n <= {ORACLE_MAX_TASKS} "
                                f"(got n={n}); use plan_bnb for larger instances")
    start = time.perf_counter()
    memo: Dict[Tuple[int, Tuple[float, ...]], Tuple[float, Action]] = {}
    stats = {"hits": 0, "states": 0}

    rho_strict = instance.rho_strict
    c_rob, c_hum, c_demo, c_fail = instance.c_rob, instance.c_hum, instance.c_demo, instance.c_fail

    def successor(k: int, q: Tuple[float, ...]) -> Tuple[float, ...]:
        return tuple(max(q[i - k], float(rho_strict[i, k])) for i in range(k + 1, n))

    def value(k: int, q: Tuple[float, ...]) -> float:
        if k == n:
            return 0.0
        key = (k, q)
        if key in memo:
            stats["hits"] += 1
            return memo[key][0]
        stats["states"] += 1

        rest = q[1:]
        learn_cost = float(c_demo[k])
        if instance.literal:
            learn_cost += float(c_fail[k]) * (1.0 - max(q[0], float(instance.rho_diag[k])))
        options = [
            (float(c_rob[k]) + (1.0 - q[0]) * float(c_fail[k]) + value(k + 1, rest), Action.ACT),
            (float(c_hum[k]) + value(k + 1, rest), Action.DELEGATE),
            (learn_cost + value(k + 1, successor(k, q)), Action.LEARN),
        ]
        best_value = min(v for v, _ in options)
        # options are listed in tie-break order
        choice = next(a for v, a in options if v <= best_value + tie_tolerance(v, best_value))
        memo[key] = (best_value, choice)
        return best_value

    q = tuple(float(p) for p in instance.rho0)
    value(0, q)

    actions = []
    for k in range(n):
        action = memo[(k, q)][1]
        actions.append(action)
        q = successor(k, q) if action == Action.LEARN else q[1:]

    plan = make_plan(instance, actions, SolverMeta(method="adl-dp", lower_bound=0.0,
                                                    nodes_expanded=stats["states"], memo_hits=stats["hits"]))
    plan.meta.lower_bound = plan.objective
    plan.meta.wall_time_ms = (time.perf_counter() - start) * 1000.0
    logger.info(f"✅ SSP dynamic program: {stats['states']} states, {stats['hits']} memo hits, "
                f"objective {plan.objective:.4f}")
    return plan


# ============================================================================
# BRANCH AND BOUND
# ============================================================================

@dataclass(order=True)
class _Node:
    bound: float
    order: int
    depth: int = field(compare=False)
    taught: Tuple[bool, ...] = field(compare=False)


def branching_order(instance: PlanInstance) -> List[int]:
    """Teach decisions by decreasing failure cost they could remove downstream."""
    score = (instance.rho_strict * instance.c_fail[:, None]).sum(axis=0)
    return sorted(range(instance.n), key=lambda j: (-score[j], j))


def plan_bnb(instance: PlanInstance, gap_tolerance: float = 0.0) -> Plan:
    """
    Best-first branch and bound on the teach variables.

    Args:
        instance: planning instance
        gap_tolerance: relative optimality gap at which to stop (0 = exact)

    Returns:
        Plan whose objective is within (1 + gap_tolerance) of the optimum, with
        an admissible lower bound in meta.lower_bound
    """
    if gap_tolerance < 0:
        raise ValueError(f"gap_tolerance must be >= 0, got {gap_tolerance}")
    start = time.perf_counter()
    n = instance.n
    order = branching_order(instance)

    def no_better(bound: float, incumbent: float) -> bool:
        return bound * (1.0 + gap_tolerance) >= incumbent - tie_tolerance(bound, incumbent)

    def open_mask(depth: int) -> np.ndarray:
        mask = np.zeros(n, dtype=bool)
        mask[order[depth:]] = True
        return mask

    incumbent_taught = (False,) * n
    incumbent, _ = complete_teach_set(instance, incumbent_taught)
    counter = 0
    root_bound = relaxed_bound(instance, incumbent_taught, open_mask(0))
    heap = [_Node(root_bound, counter, 0, incumbent_taught)]
    pruned_bound = math.inf
    nodes = 0

    while heap:
        node = heapq.heappop(heap)
        if no_better(node.bound, incumbent):
            pruned_bound = min(pruned_bound, node.bound)
            break
        nodes += 1
        if node.depth == n:
            continue

        var = order[node.depth]
        for teach in (True, False):
            taught = list(node.taught)
            taught[var] = teach
            taught = tuple(taught)
            depth = node.depth + 1

            total, _ = complete_teach_set(instance, taught)
            if total < incumbent - tie_tolerance(total, incumbent):
                incumbent, incumbent_taught = total, taught
                logger.debug(f"New incumbent {incumbent:.4f} at depth {depth}")

            bound = relaxed_bound(instance, taught, open_mask(depth))
            if no_better(bound, incumbent):
                pruned_bound = min(pruned_bound, bound)
                continue
            counter += 1
            heapq.heappush(heap, _Node(bound, counter, depth, taught))

    remaining = min((node.bound for node in heap), default=math.inf)
    _, actions = complete_teach_set(instance, incumbent_taught)
    plan = make_plan(instance, actions, SolverMeta(method="adl-bnb", lower_bound=0.0, nodes_expanded=nodes))
    lower_bound = min(plan.objective, pruned_bound, remaining)
    plan.meta.lower_bound = lower_bound
    plan.meta.gap = (plan.objective - lower_bound) / max(abs(plan.objective), 1e-12)
    plan.meta.wall_time_ms = (time.perf_counter() - start) * 1000.0
    logger.info(f"✅ Branch and bound: {nodes} nodes expanded, objective {plan.objective:.4f}, "
                f"bound {lower_bound:.4f}")
    return plan


# ============================================================================
# GREEDY FACILITY LOCATION
# ============================================================================

def _facility_total(instance: PlanInstance, taught: np.ndarray, delegated: np.ndarray) -> float:
    p = np.maximum(instance.rho0, (instance.rho_strict * taught[None, :]).max(axis=1, initial=0.0))
    failure = instance.c_fail * (1.0 - p)
    if instance.literal:
        failure = np.where(taught, instance.c_fail * (1.0 - np.maximum(p, instance.rho_diag)), failure)
    else:
        failure = np.where(taught, 0.0, failure)
    failure = np.where(delegated, 0.0, failure)
    opening = np.where(taught, instance.c_demo - instance.c_rob, 0.0) + \
        np.where(delegated, instance.c_hum - instance.c_rob, 0.0)
    return float(instance.c_rob.sum() + opening.sum() + failure.sum())


def plan_greedy_facility(instance: PlanInstance) -> Plan:
    """
    Greedy facility location.

    Facilities are "teach task j" (opening cost c_demo - c_rob) and
    "delegate task i" (opening cost c_hum - c_rob); every task starts
    connected to the robot acting with its pretrained success. Each round
    opens the improving facility with the lowest opening cost per unit of
    failure cost it removes. Teach decisions are then completed in closed
    form.
    """
    start = time.perf_counter()
    n = instance.n
    taught = np.zeros(n, dtype=bool)
    delegated = np.zeros(n, dtype=bool)
    current = _facility_total(instance, taught, delegated)
    rounds = 0

    while True:
        best_key, best_move = None, None
        for kind, rank in ((Action.DELEGATE, 0), (Action.LEARN, 1)):
            for i in range(n):
                if taught[i] or delegated[i]:
                    continue
                trial_taught, trial_delegated = taught.copy(), delegated.copy()
                if kind == Action.LEARN:
                    trial_taught[i] = True
                    opening = instance.c_demo[i] - instance.c_rob[i]
                else:
                    trial_delegated[i] = True
                    opening = instance.c_hum[i] - instance.c_rob[i]
                total = _facility_total(instance, trial_taught, trial_delegated)
                if total >= current - tie_tolerance(total, current):
                    continue
                savings = current - total + opening
                ratio = opening / savings if savings > 0 else -math.inf
                key = (ratio, rank, i)
                if best_key is None or key < best_key:
                    best_key, best_move = key, (trial_taught, trial_delegated, total)
        if best_move is None:
            break
        taught, delegated, current = best_move
        rounds += 1

    _, actions = complete_teach_set(instance, taught)
    plan = make_plan(instance, actions, SolverMeta(method="greedy", lower_bound=0.0, nodes_expanded=rounds))
    plan.meta.lower_bound = min(plan.objective, relaxed_bound(instance, np.zeros(n, dtype=bool),
                                                              np.ones(n, dtype=bool)))
    plan.meta.gap = (plan.objective - plan.meta.lower_bound) / max(abs(plan.objective), 1e-12)
    plan.meta.wall_time_ms = (time.perf_counter() - start) * 1000.0
    logger.info(f"✅ Greedy facility location: {rounds} facilities opened, objective {plan.objective:.4f}")
    return plan


# ============================================================================
# REPORTING AND FILES
# ============================================================================

def plan_table(instance: PlanInstance, plan: Plan) -> pd.DataFrame:
    """Per-task action, serving skill, success probability and expected cost contribution."""
    p = success_probabilities(instance, plan.actions)
    contributions = task_costs(instance, plan.actions)
    rows = []
    for i, action in enumerate(plan.actions):
        source = plan.serving[i]
        rows.append({
            "task_id": instance.task_ids[i],
            "action": action.value,
            "serving": "" if source is None else (source if source == PRETRAINED else f"learned@{source}"),
            "p_i": float(p[i]) if action == Action.ACT else float("nan"),
            "expected_cost": float(contributions[i]),
        })
    return pd.DataFrame(rows)


def instance_to_dict(instance: PlanInstance) -> Dict:
    n = instance.n
    return {
        "n": n,
        "rho0": [float(v) for v in instance.rho0],
        "rho": [[float(instance.rho[i, j]) if j <= i else None for j in range(n)] for i in range(n)],
        "costs": [c.to_dict() for c in instance.costs],
        "mode": instance.mode,
        "task_ids": [int(t) for t in instance.task_ids],
    }


def instance_from_dict(data: Dict) -> PlanInstance:
    rho = np.array([[np.nan if v is None else v for v in row] for row in data["rho"]], dtype=float)
    instance = PlanInstance(
        rho0=np.asarray(data["rho0"], dtype=float),
        rho=rho.reshape(len(data["rho0"]), len(data["rho0"])),
        costs=[CostVector.from_dict(c) for c in data["costs"]],
        mode=data.get("mode", "mdp_consistent"),
        task_ids=data.get("task_ids"),
    )
    if instance.n != data["n"]:
        raise ValueError(f"n field {data['n']} disagrees with rho0 length {instance.n}")
    return instance


def plan_to_dict(plan: Plan) -> Dict:
    return {
        "actions": [a.value for a in plan.actions],
        "serving": list(plan.serving),
        "objective": float(plan.objective),
        "lower_bound": float(plan.meta.lower_bound),
        "gap": float(plan.meta.gap),
        "nodes": int(plan.meta.nodes_expanded),
        "wall_time_ms": float(plan.meta.wall_time_ms),
        "method": plan.meta.method,
    }


def plan_from_dict(data: Dict) -> Plan:
    meta = SolverMeta(
        method=data.get("method", "unknown"),
        lower_bound=float(data["lower_bound"]),
        gap=float(data["gap"]),
        nodes_expanded=int(data["nodes"]),
        wall_time_ms=float(data["wall_time_ms"]),
    )
    return Plan(actions=_parse_actions(data["actions"]), serving=list(data["serving"]),
                objective=float(data["objective"]), meta=meta)


def save_instance(instance: PlanInstance, path: str):
    with open(path, "w") as f:
        json.dump(instance_to_dict(instance), f, indent=2)


def load_instance(path: str) -> PlanInstance:
    with open(path) as f:
        return instance_from_dict(json.load(f))


def save_plan(plan: Plan, path: str):
    with open(path, "w") as f:
        json.dump(plan_to_dict(plan), f, indent=2, allow_nan=False)
    logger.info(f"Plan saved: {path}")


def load_plan(path: str) -> Plan:
    with open(path) as f:
        return plan_from_dict(json.load(f))


PLANNERS = {
    "adl-bnb": plan_bnb,
    "adl-exhaustive": plan_exhaustive,
    "adl-dp": plan_ssp_dp,
    "greedy": plan_greedy_facility,
}
