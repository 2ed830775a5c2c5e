"""Shared fixtures for the ADL test suite."""

import numpy as np
import pytest

from adl_planner import PlanInstance
from config.adl_config import reset_adl_settings
from task_domain import CostVector

UNIFORM = CostVector(c_rob=10.0, c_hum=100.0, c_demo=200.0, c_fail=100.0)


def make_instance(rho0, rho=None, costs=UNIFORM, mode="mdp_consistent"):
    """Instance from plain lists; `rho` may be a dict {(i, j): p} of lower-triangular entries."""
    n = len(rho0)
    matrix = np.zeros((n, n))
    if isinstance(rho, dict):
        for (i, j), p in rho.items():
            matrix[i, j] = p
    elif rho is not None:
        matrix = np.asarray(rho, dtype=float)
    cost_list = costs if isinstance(costs, list) else [costs] * n
    return PlanInstance(rho0=np.asarray(rho0, dtype=float), rho=matrix, costs=cost_list, mode=mode)


def random_instance(rng, n, mode="mdp_consistent", random_costs=False):
    rho0 = rng.uniform(0, 1, size=n)
    rho = np.tril(rng.uniform(0, 1, size=(n, n)))
    if random_costs:
        costs = [CostVector(*rng.uniform(0, 200, size=4)) for _ in range(n)]
    else:
        costs = [UNIFORM] * n
    return PlanInstance(rho0=rho0, rho=rho, costs=costs, mode=mode)


def random_instances(count=200, seed=2024, sizes=range(3, 13), mode="mdp_consistent"):
    """Mix of default-cost instances and instances with 20 distinct random cost settings."""
    rng = np.random.default_rng(seed)
    sizes = list(sizes)
    instances = []
    for k in range(count):
        n = sizes[k % len(sizes)]
        instances.append(random_instance(rng, n, mode=mode, random_costs=(k % 10 == 0 or k < 20)))
    return instances


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    monkeypatch.setenv("ADL_OUTPUT_ROOT", str(tmp_path / "output"))
    monkeypatch.delenv("ADL_LOG_LEVEL", raising=False)
    monkeypatch.delenv("ADL_MC_TRIALS", raising=False)
    reset_adl_settings()
    yield
    reset_adl_settings()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
