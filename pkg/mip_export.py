"""
MIP Export

Linearized mixed-integer program for an ADL planning instance, written in
the CPLEX LP text format, plus an optional OR-Tools solve of the same
program used to cross-check the native planners.

Variables (1-based task numbers):
    x_i      teach task i (binary)
    y_i      delegate task i (binary)
    u_i_0    task i served by its best pretrained skill
    u_i_j    task i served by the skill taught on task j
    w_i      failure probability charged to task i, in [0, 1]
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from adl_planner import PlanInstance

logger = logging.getLogger(__name__)


def _no_negative_zero(value: float) -> float:
    return 0.0 if value == 0 else value


def _fmt(value: float) -> str:
    return "%+.17g" % _no_negative_zero(value)


@dataclass
class Constraint:
    name: str
    terms: List[Tuple[str, float]]
    sense: str
    rhs: float


@dataclass
class LinearProgram:
    """Minimization program kept in insertion order so the LP text is deterministic."""
    name: str
    objective: List[Tuple[str, float]] = field(default_factory=list)
    objective_offset: float = 0.0
    constraints: List[Constraint] = field(default_factory=list)
    bounds: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    binaries: List[str] = field(default_factory=list)

    def add_continuous(self, var: str, lo: float = 0.0, hi: float = 1.0):
        self.bounds[var] = (lo, hi)

    def add_binary(self, var: str):
        self.binaries.append(var)

    def add_constraint(self, name: str, terms: List[Tuple[str, float]], sense: str, rhs: float):
        if sense not in ("<=", ">=", "="):
            raise ValueError(f"Unknown constraint sense '{sense}'")
        self.constraints.append(Constraint(name, terms, sense, rhs))

    @property
    def variables(self) -> List[str]:
        return list(self.binaries) + list(self.bounds)

    def to_lp(self) -> str:
        lines = [
            f"\\ {self.name}",
            f"\\ objective offset: {_fmt(self.objective_offset)}",
            "",
            "Minimize",
            " obj:",
        ]
        terms = self.objective or [(self.variables[0], 0.0)]
        lines += [f" {_fmt(coef)} {var}" for var, coef in terms]

        lines += ["", "Subject To"]
        for row in self.constraints:
            lines.append(f" {row.name}:")
            lines += [f" {_fmt(coef)} {var}" for var, coef in row.terms]
            lines.append(f" {row.sense} {_fmt(row.rhs)}")

        lines += ["", "Bounds"]
        for var, (lo, hi) in self.bounds.items():
            lines.append(f" {_fmt(lo)} <= {var} <= {_fmt(hi)}")

        lines += ["", "Binary"]
        lines += [f" {var}" for var in self.binaries]
        lines += ["", "End", ""]
        return "\n".join(lines)


def build_mip(instance: PlanInstance) -> LinearProgram:
    """
    Linearize the planning objective.

    In mdp_consistent mode a taught task pays exactly c_demo; in
    literal_paper mode the task's own skill enters its failure row through
    u_i_i <= x_i and the taught task keeps a failure term.
    """
    n = instance.n
    lp = LinearProgram(name=f"ADL linearized program ({instance.mode}, {n} tasks)")
    lp.objective_offset = float(instance.c_rob.sum())

    for i in range(n):
        lp.add_binary(f"x_{i + 1}")
        lp.add_binary(f"y_{i + 1}")

    for i in range(n):
        task = i + 1
        lp.objective.append((f"x_{task}", float(instance.c_demo[i] - instance.c_rob[i])))
        lp.objective.append((f"y_{task}", float(instance.c_hum[i] - instance.c_rob[i])))
        lp.objective.append((f"w_{task}", float(instance.c_fail[i])))

        sources = list(range(i + 1)) if instance.literal else list(range(i))
        lp.add_continuous(f"u_{task}_0")
        for j in sources:
            lp.add_continuous(f"u_{task}_{j + 1}")
        lp.add_continuous(f"w_{task}")

        lp.add_constraint(f"one_action_{task}", [(f"x_{task}", 1.0), (f"y_{task}", 1.0)], "<=", 1.0)
        for j in sources:
            lp.add_constraint(f"link_{task}_{j + 1}", [(f"u_{task}_{j + 1}", 1.0), (f"x_{j + 1}", -1.0)], "<=", 0.0)
        lp.add_constraint(f"assign_{task}",
                          [(f"u_{task}_0", 1.0)] + [(f"u_{task}_{j + 1}", 1.0) for j in sources], "<=", 1.0)

        fail_terms = [(f"w_{task}", 1.0), (f"y_{task}", 1.0)]
        if not instance.literal:
            fail_terms.append((f"x_{task}", 1.0))
        fail_terms.append((f"u_{task}_0", float(instance.rho0[i])))
        fail_terms += [(f"u_{task}_{j + 1}", float(instance.rho[i, j])) for j in sources]
        lp.add_constraint(f"failure_{task}", fail_terms, ">=", 1.0)

    return lp


def export_mip(instance: PlanInstance, path: str) -> LinearProgram:
    lp = build_mip(instance)
    with open(path, "w") as f:
        f.write(lp.to_lp())
    logger.info(f"MIP exported: {path} ({len(lp.binaries)} binaries, {len(lp.bounds)} continuous, "
                f"{len(lp.constraints)} constraints)")
    return lp


def solve_mip_with_ortools(instance: PlanInstance, time_limit_s: float = 60.0) -> float:
    """
    Solve the linearized program with OR-Tools and return the objective including the offset.

    Raises:
        RuntimeError: no MIP backend available, or no optimal solution found
    """
    from ortools.linear_solver import pywraplp

    lp = build_mip(instance)
    solver = None
    for backend in ("SCIP", "CBC"):
        solver = pywraplp.Solver.CreateSolver(backend)
        if solver is not None:
            break
    if solver is None:
        raise RuntimeError("No OR-Tools MIP backend (SCIP or CBC) is available")
    solver.SetTimeLimit(int(time_limit_s * 1000))

    variables = {}
    for var in lp.binaries:
        variables[var] = solver.BoolVar(var)
    for var, (lo, hi) in lp.bounds.items():
        variables[var] = solver.NumVar(lo, hi, var)

    for row in lp.constraints:
        expr = sum(coef * variables[var] for var, coef in row.terms)
        if row.sense == "<=":
            solver.Add(expr <= row.rhs, row.name)
        elif row.sense == ">=":
            solver.Add(expr >= row.rhs, row.name)
        else:
            solver.Add(expr == row.rhs, row.name)

    solver.Minimize(sum(coef * variables[var] for var, coef in lp.objective))
    params = pywraplp.MPSolverParameters()
    params.SetDoubleParam(pywraplp.MPSolverParameters.RELATIVE_MIP_GAP, 0.0)
    status = solver.Solve(params)
    if status != pywraplp.Solver.OPTIMAL:
        logger.error(f"❌ OR-Tools did not prove optimality (status {status})")
        raise RuntimeError(f"OR-Tools solve ended with status {status}")

    objective = solver.Objective().Value() + lp.objective_offset
    logger.info(f"✅ OR-Tools cross-check objective: {objective:.6f}")
    return objective
