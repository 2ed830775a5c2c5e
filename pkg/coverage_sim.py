"""
Coverage Simulation Module

Abstract simulators used to label skill transfer between tasks:
- CoverageSimulator: tap-sequence skills on grid parts; a tap covers every
  occupied cell within tap_radius_cm of it (hard disk, 1 cell = 1 cm).
- InsertionSimulator: block-insertion skills; a skill transfers to a slot in
  the same wall cell of the same environment when the slots are close enough
  for the position noise.
Both expose learn_skill / evaluate_skill, which get_training_data uses to
build the (train task, test task, label) dataset.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.adl_config import InsertionConfig, SimConfig
from task_domain import (
    WORKSPACE_CM,
    Skill,
    Task,
    decode_block_features,
    occupied_bounds,
)

logger = logging.getLogger(__name__)

# Squared-distance slack for cells lying exactly on the tap radius
_RADIUS_EPS = 1e-9


class CoverageUnreachable(RuntimeError):
    """Raised when max_taps sampled taps do not reach the coverage threshold."""


def _covered_mask(taps: np.ndarray, cells: np.ndarray, radius: float) -> np.ndarray:
    """Boolean mask over `cells` of those within `radius` of any tap (cell-centre distances)."""
    if len(taps) == 0:
        return np.zeros(len(cells), dtype=bool)
    diff = cells[None, :, :] - taps[:, None, :]
    dist2 = (diff ** 2).sum(axis=2)
    return (dist2 <= radius * radius + _RADIUS_EPS).any(axis=0)


def coverage_fraction(tap_cells: Sequence[Tuple[int, int]], task: Task, radius: float) -> float:
    """Fraction of the task's occupied cells covered by taps at the given cell-index positions."""
    cells = np.argwhere(task.grid).astype(float)
    taps = np.asarray(tap_cells, dtype=float).reshape(-1, 2)
    return float(_covered_mask(taps, cells, radius).mean())


class CoverageSimulator:
    """Grid-part coverage simulator."""

    def __init__(self, cfg: Optional[SimConfig] = None):
        self.cfg = cfg or SimConfig()
        self.logger = logging.getLogger(__name__)

    def learn_skill(self, task: Task) -> Skill:
        """
        Learn a tap skill by sampling occupied cells uniformly until the part is covered.

        Taps that cover no new cell are dropped in sample order. The kept taps
        are stored relative to the part's bounding box, in [0,1] x [0,1].

        Raises:
            ValueError: task has no grid
            CoverageUnreachable: max_taps samples did not reach the threshold
        """
        if task.grid is None:
            raise ValueError(f"Task {task.id} has no grid; coverage skills need a grid part")

        rng = np.random.default_rng([self.cfg.seed, task.id])
        cells = np.argwhere(task.grid)
        points = cells.astype(float)
        covered = np.zeros(len(cells), dtype=bool)
        kept = []

        for _ in range(self.cfg.max_taps):
            index = int(rng.integers(0, len(cells)))
            reach = _covered_mask(points[index:index + 1], points, self.cfg.tap_radius_cm)
            if (reach & ~covered).any():
                covered |= reach
                kept.append(cells[index])
                if covered.mean() >= self.cfg.coverage_threshold:
                    break

        if covered.mean() < self.cfg.coverage_threshold:
            raise CoverageUnreachable(
                f"Task {task.id}: coverage {covered.mean():.3f} < {self.cfg.coverage_threshold} "
                f"after {self.cfg.max_taps} sampled taps"
            )

        (r0, r1), (c0, c1) = occupied_bounds(task.grid)
        height, width = r1 - r0, c1 - c0
        taps = tuple(((int(r) - r0 + 0.5) / height, (int(c) - c0 + 0.5) / width) for r, c in kept)
        return Skill(
            taps=taps,
            trained_on=task.id,
            frame_size_cm=task.size_cm,
            train_features=tuple(float(v) for v in task.features),
        )

    def place_taps(self, skill: Skill, task: Task) -> np.ndarray:
        """
        Map normalized taps onto the target part's bounding box (per-axis scaling).

        Positions are continuous, in cell-index coordinates (cell (r, c) has its
        centre at (r, c)). On the training part and on translated copies every
        tap lands exactly on a cell centre, so this agrees with nearest-cell
        rounding there. On an s-times enlarged part the taps sit at s times
        their original offsets, and each sub-cell of a covered cell lies within
        s * r + (s - 1) / sqrt(2) of its tap.
        """
        (r0, r1), (c0, c1) = occupied_bounds(task.grid)
        height, width = r1 - r0, c1 - c0
        norm = np.asarray(skill.taps, dtype=float).reshape(-1, 2)
        rows = r0 - 0.5 + norm[:, 0] * height
        cols = c0 - 0.5 + norm[:, 1] * width
        return np.stack([rows, cols], axis=1)

    def evaluate_skill(self, skill: Skill, task: Task) -> bool:
        if task.grid is None:
            raise ValueError(f"Task {task.id} has no grid; coverage skills need a grid part")
        fraction = coverage_fraction(self.place_taps(skill, task), task, self.cfg.tap_radius_cm)
        return fraction >= self.cfg.coverage_threshold


class InsertionSimulator:
    """
    Block-insertion transfer simulator.

    Environment e splits the workspace into (1 + e//2) columns and
    (1 + (e-1)//2) rows of wall cells. A skill learned on one slot succeeds on
    another when both share the environment and the wall cell and the slots
    lie within transfer_radius_cm minus twice the slot noise.
    """

    def __init__(self, cfg: Optional[InsertionConfig] = None):
        self.cfg = cfg or InsertionConfig()
        self.logger = logging.getLogger(__name__)

    @staticmethod
    def wall_cell(env_id: int, slot_cm: Tuple[float, float]) -> Tuple[int, int]:
        cols = 1 + env_id // 2
        rows = 1 + (env_id - 1) // 2
        col = min(int(slot_cm[0] / (WORKSPACE_CM / cols)), cols - 1)
        row = min(int(slot_cm[1] / (WORKSPACE_CM / rows)), rows - 1)
        return row, col

    def learn_skill(self, task: Task) -> Skill:
        _, slot, _ = decode_block_features(task.features)
        waypoint = (slot[1] / WORKSPACE_CM, slot[0] / WORKSPACE_CM)
        return Skill(
            taps=(waypoint,),
            trained_on=task.id,
            frame_size_cm=(WORKSPACE_CM, WORKSPACE_CM),
            train_features=tuple(float(v) for v in task.features),
        )

    def evaluate_skill(self, skill: Skill, task: Task) -> bool:
        train_env, train_slot, _ = decode_block_features(np.asarray(skill.train_features))
        test_env, test_slot, noise = decode_block_features(task.features)
        if train_env != test_env:
            return False
        if self.wall_cell(train_env, train_slot) != self.wall_cell(test_env, test_slot):
            return False
        reach = self.cfg.transfer_radius_cm - 2.0 * max(noise, self.cfg.noise_cm)
        distance = float(np.hypot(train_slot[0] - test_slot[0], train_slot[1] - test_slot[1]))
        return distance <= max(reach, 0.0)


def make_simulator(domain: str, sim_cfg: Optional[SimConfig] = None,
                   insertion_cfg: Optional[InsertionConfig] = None):
    if domain == "grid_part":
        return CoverageSimulator(sim_cfg)
    if domain == "block":
        return InsertionSimulator(insertion_cfg)
    raise ValueError(f"Unknown domain '{domain}'")


def learn_skill(task: Task, cfg: Optional[SimConfig] = None) -> Skill:
    return CoverageSimulator(cfg).learn_skill(task)


def evaluate_skill(skill: Skill, task: Task, cfg: Optional[SimConfig] = None) -> bool:
    return CoverageSimulator(cfg).evaluate_skill(skill, task)


# ============================================================================
# TRAINING DATA
# ============================================================================

def feature_columns(dims: int) -> Tuple[list, list]:
    return [f"feat_train_{d}" for d in range(dims)], [f"feat_test_{d}" for d in range(dims)]


def get_training_data(m: int, n: int, task_source: Sequence[Task], sim, seed: int = 0) -> pd.DataFrame:
    """
    Collect precondition labels in simulation.

    Samples m evaluation tasks and n training tasks from `task_source`
    (without replacement when the pool is large enough), learns one skill per
    training task and evaluates it on every evaluation task.

    Args:
        m: number of evaluation tasks
        n: number of training tasks
        task_source: pool of tasks to sample from
        sim: CoverageSimulator or InsertionSimulator
        seed: sampling seed

    Returns:
        DataFrame with train_id, test_id, feat_train_*, feat_test_*, label;
        m rows per training task whose skill could be learned
    """
    if m < 1 or n < 1:
        raise ValueError(f"m and n must be >= 1, got m={m}, n={n}")
    if not task_source:
        raise ValueError("task_source is empty")

    pool = list(task_source)
    rng = np.random.default_rng(seed)
    eval_idx = rng.choice(len(pool), size=m, replace=m > len(pool))
    train_idx = rng.choice(len(pool), size=n, replace=n > len(pool))
    eval_tasks = [pool[int(i)] for i in eval_idx]
    eval_features = np.stack([task.features for task in eval_tasks])
    dims = eval_features.shape[1]

    blocks = []
    skipped = 0
    for i in train_idx:
        train_task = pool[int(i)]
        try:
            skill = sim.learn_skill(train_task)
        except CoverageUnreachable as e:
            skipped += 1
            logger.warning(f"Skipping training task {train_task.id}: {e}")
            continue

        labels = np.array([sim.evaluate_skill(skill, task) for task in eval_tasks], dtype=int)
        block = np.column_stack([
            np.full(m, train_task.id),
            [task.id for task in eval_tasks],
            np.tile(train_task.features, (m, 1)),
            eval_features,
            labels,
        ])
        blocks.append(block)

    train_cols, test_cols = feature_columns(dims)
    columns = ["train_id", "test_id"] + train_cols + test_cols + ["label"]
    data = np.vstack(blocks) if blocks else np.empty((0, len(columns)))
    df = pd.DataFrame(data, columns=columns)
    df[["train_id", "test_id", "label"]] = df[["train_id", "test_id", "label"]].astype(int)

    positive_rate = df["label"].mean() if len(df) else float("nan")
    logger.info(f"Collected {len(df)} labeled pairs ({skipped} training tasks skipped, "
                f"positive rate {positive_rate:.3f})")
    return df


def save_dataset(df: pd.DataFrame, path: str):
    df.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Dataset saved: {path} ({len(df)} rows)")


def load_dataset(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")
