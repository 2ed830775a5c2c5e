"""
Task Domain Module

Tasks, per-task costs, skills and skill libraries for the two simulated
domains (grid-part coverage tasks and block-insertion tasks), the task-set
generators, library pretraining and the JSON task/library files.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.adl_config import DEFAULT_COSTS

logger = logging.getLogger(__name__)

GRID_ROWS = 20
GRID_COLS = 20
FEATURE_GRID = 8
WORKSPACE_CM = 20.0
SLOT_NOISE_CM = 0.3
SLOT_MARGIN_CM = 2.0
SLOT_SIZE_CM = (1.2, 1.2)


class PretrainingError(RuntimeError):
    """Raised when pretraining cannot learn enough skills within the retry limit."""


@dataclass(frozen=True)
class CostVector:
    c_rob: float
    c_hum: float
    c_demo: float
    c_fail: float

    def __post_init__(self):
        for name in ("c_rob", "c_hum", "c_demo", "c_fail"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")

    @classmethod
    def defaults(cls) -> "CostVector":
        return cls(**DEFAULT_COSTS)

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "CostVector":
        return cls(
            c_rob=float(data["c_rob"]),
            c_hum=float(data["c_hum"]),
            c_demo=float(data["c_demo"]),
            c_fail=float(data["c_fail"]),
        )

    def to_dict(self) -> Dict[str, float]:
        return {"c_rob": self.c_rob, "c_hum": self.c_hum, "c_demo": self.c_demo, "c_fail": self.c_fail}

    def scaled(self, factor: float) -> "CostVector":
        return CostVector(self.c_rob * factor, self.c_hum * factor, self.c_demo * factor, self.c_fail * factor)


@dataclass(frozen=True, eq=False)
class Task:
    """
    A single task in the sequence.

    Grid-part tasks carry a binary occupancy grid (1 cell = 1 cm), a grasp
    cell and a shape family; block tasks only carry features and costs.
    """
    id: int
    features: np.ndarray
    size_cm: Tuple[float, float]
    costs: CostVector = field(default_factory=CostVector.defaults)
    grid: Optional[np.ndarray] = None
    grasp_cell: Optional[Tuple[int, int]] = None
    family: Optional[int] = None

    def __post_init__(self):
        if self.size_cm[0] <= 0 or self.size_cm[1] <= 0:
            raise ValueError(f"Task {self.id}: size_cm must be strictly positive, got {self.size_cm}")
        if self.grid is not None:
            if not self.grid.any():
                raise ValueError(f"Task {self.id}: grid has no occupied cell")
            if self.grasp_cell is not None and not self.grid[self.grasp_cell]:
                raise ValueError(f"Task {self.id}: grasp cell {self.grasp_cell} is not on the part")

    @classmethod
    def from_grid(cls, task_id: int, grid: np.ndarray, costs: Optional[CostVector] = None,
                  grasp_cell: Optional[Tuple[int, int]] = None, family: Optional[int] = None) -> "Task":
        """Build a grid-part task, deriving size and features from the grid."""
        grid = np.asarray(grid, dtype=bool)
        rows, cols = occupied_bounds(grid)
        size_cm = (float(cols[1] - cols[0]), float(rows[1] - rows[0]))
        if grasp_cell is None:
            grasp_cell = central_cell(grid)
        return cls(
            id=task_id,
            features=extract_features(grid, size_cm),
            size_cm=size_cm,
            costs=costs or CostVector.defaults(),
            grid=grid,
            grasp_cell=grasp_cell,
            family=family,
        )

    @property
    def is_grid_part(self) -> bool:
        return self.grid is not None


@dataclass(frozen=True)
class Skill:
    """Tap (or waypoint) sequence in the normalized part frame, plus its training task."""
    taps: Tuple[Tuple[float, float], ...]
    trained_on: int
    frame_size_cm: Tuple[float, float]
    train_features: Tuple[float, ...] = ()

    def __post_init__(self):
        for row, col in self.taps:
            if not (0.0 <= row <= 1.0 and 0.0 <= col <= 1.0):
                raise ValueError(f"Skill trained on {self.trained_on}: tap ({row}, {col}) outside [0,1]x[0,1]")


@dataclass
class SkillLibrary:
    skills: List[Skill] = field(default_factory=list)
    provenance: List[int] = field(default_factory=list)

    def add(self, skill: Skill):
        if skill.trained_on in self.provenance:
            raise ValueError(f"Library already holds a skill trained on task {skill.trained_on}")
        self.skills.append(skill)
        self.provenance.append(skill.trained_on)

    def __len__(self):
        return len(self.skills)


# ============================================================================
# FEATURES
# ============================================================================

def occupied_bounds(grid: np.ndarray) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    """Half-open (row, col) bounds of the occupied cells."""
    rows = np.flatnonzero(grid.any(axis=1))
    cols = np.flatnonzero(grid.any(axis=0))
    return (int(rows[0]), int(rows[-1]) + 1), (int(cols[0]), int(cols[-1]) + 1)


def crop_to_part(grid: np.ndarray) -> np.ndarray:
    (r0, r1), (c0, c1) = occupied_bounds(grid)
    return grid[r0:r1, c0:c1]


def max_pool_resize(crop: np.ndarray, size: int = FEATURE_GRID) -> np.ndarray:
    """
    Resize a binary crop to size x size.

    Output cell (r, c) is 1 iff some source cell maps into it; works for
    both shrinking and growing crops.
    """
    height, width = crop.shape
    pooled = np.zeros((size, size), dtype=bool)
    for r in range(size):
        r_lo, r_hi = (r * height) // size, -(-((r + 1) * height) // size)
        for c in range(size):
            c_lo, c_hi = (c * width) // size, -(-((c + 1) * width) // size)
            pooled[r, c] = crop[r_lo:r_hi, c_lo:c_hi].any()
    return pooled


def extract_features(grid: np.ndarray, size_cm: Tuple[float, float]) -> np.ndarray:
    """64 max-pooled occupancy bits of the part crop followed by (width, height) in cm."""
    pooled = max_pool_resize(crop_to_part(np.asarray(grid, dtype=bool)))
    return np.concatenate([pooled.astype(float).ravel(), np.asarray(size_cm, dtype=float)])


def central_cell(grid: np.ndarray) -> Tuple[int, int]:
    """Occupied cell closest to the part centroid (lowest row-major index on ties)."""
    cells = np.argwhere(grid)
    centroid = cells.mean(axis=0)
    best = int(np.argmin(((cells - centroid) ** 2).sum(axis=1)))
    return int(cells[best][0]), int(cells[best][1])


# ============================================================================
# GRID-PART GENERATOR
# ============================================================================

def _random_base_shape(rng: np.random.Generator, canvas: int = 12) -> np.ndarray:
    """Rectilinear part built from 1-4 overlapping bricks anchored on occupied cells."""
    shape = np.zeros((canvas, canvas), dtype=bool)
    brick_count = int(rng.integers(1, 5))
    for brick in range(brick_count):
        long_side = int(rng.integers(2, 7))
        short_side = int(rng.integers(1, 4))
        height, width = (long_side, short_side) if rng.random() < 0.5 else (short_side, long_side)
        if brick == 0:
            top, left = (canvas - height) // 2, (canvas - width) // 2
        else:
            anchor = np.argwhere(shape)[int(rng.integers(0, int(shape.sum())))]
            top = int(anchor[0]) - int(rng.integers(0, height))
            left = int(anchor[1]) - int(rng.integers(0, width))
        top, left = max(0, top), max(0, left)
        shape[top:min(canvas, top + height), left:min(canvas, left + width)] = True
    return crop_to_part(shape)


def _resize_nearest(shape: np.ndarray, scale: float) -> np.ndarray:
    height, width = shape.shape
    new_h = min(GRID_ROWS, max(1, int(round(height * scale))))
    new_w = min(GRID_COLS, max(1, int(round(width * scale))))
    rows = np.minimum((np.arange(new_h) + 0.5) * height / new_h, height - 1).astype(int)
    cols = np.minimum((np.arange(new_w) + 0.5) * width / new_w, width - 1).astype(int)
    return shape[np.ix_(rows, cols)]


def generate_grid_part_tasks(count: int, seed: int, shape_family_count: int,
                             costs: Optional[CostVector] = None) -> List[Task]:
    """
    Generate `count` grid-part tasks split into `shape_family_count` families.

    Each family is a random rectilinear part; its instances are the base part
    rescaled by a small factor and placed at a random position on the grid.
    """
    rng = np.random.default_rng(seed)
    bases = [_random_base_shape(rng) for _ in range(shape_family_count)]
    tasks = []
    for task_id in range(count):
        family = task_id * shape_family_count // count
        shape = _resize_nearest(bases[family], float(rng.uniform(0.8, 1.25)))
        height, width = shape.shape
        top = int(rng.integers(0, GRID_ROWS - height + 1))
        left = int(rng.integers(0, GRID_COLS - width + 1))
        grid = np.zeros((GRID_ROWS, GRID_COLS), dtype=bool)
        grid[top:top + height, left:left + width] = shape
        cells = np.argwhere(grid)
        grasp = cells[int(rng.integers(0, len(cells)))]
        tasks.append(Task.from_grid(task_id, grid, costs=costs, grasp_cell=(int(grasp[0]), int(grasp[1])),
                                    family=family))

    logger.info(f"Generated {len(tasks)} grid-part tasks in {shape_family_count} families (seed={seed})")
    return tasks


# ============================================================================
# BLOCK-INSERTION GENERATOR
# ============================================================================

def block_features(env_id: int, env_count: int, slot_cm: Tuple[float, float], noise_cm: float) -> np.ndarray:
    one_hot = np.zeros(env_count)
    one_hot[env_id - 1] = 1.0
    return np.concatenate([one_hot, np.asarray(slot_cm, dtype=float), [noise_cm]])


def decode_block_features(features: np.ndarray) -> Tuple[int, Tuple[float, float], float]:
    """Inverse of block_features: (environment id, slot position, noise sigma)."""
    env_count = len(features) - 3
    env_id = int(np.argmax(features[:env_count])) + 1
    return env_id, (float(features[env_count]), float(features[env_count + 1])), float(features[-1])


def generate_block_tasks(count: int, seed: int, env_count: int,
                         costs: Optional[CostVector] = None) -> List[Task]:
    """Block insertion tasks: environments assigned round-robin, slots uniform inside the margins."""
    rng = np.random.default_rng(seed)
    tasks = []
    for task_id in range(count):
        env_id = 1 + task_id % env_count
        slot = rng.uniform(SLOT_MARGIN_CM, WORKSPACE_CM - SLOT_MARGIN_CM, size=2)
        slot_cm = (float(slot[0]), float(slot[1]))
        tasks.append(Task(
            id=task_id,
            features=block_features(env_id, env_count, slot_cm, SLOT_NOISE_CM),
            size_cm=SLOT_SIZE_CM,
            costs=costs or CostVector.defaults(),
        ))

    logger.info(f"Generated {len(tasks)} block tasks across {env_count} environments (seed={seed})")
    return tasks


# ============================================================================
# PRETRAINING
# ============================================================================

def pretrain_library(tasks: Sequence[Task], k: int, seed: int, sim, max_retries: int = 10) -> SkillLibrary:
    """
    Learn k skills on distinct tasks drawn uniformly from `tasks`.

    Tasks are drawn from one seeded permutation, so the k-skill library's
    provenance is a prefix of the (k+1)-skill library's. A task whose
    learning fails is skipped in favour of the next one in the permutation.
    """
    if not 0 <= k <= len(tasks):
        raise ValueError(f"k must be in [0, {len(tasks)}], got {k}")

    library = SkillLibrary()
    order = np.random.default_rng(seed).permutation(len(tasks))
    failures = 0
    for index in order:
        if len(library) == k:
            break
        task = tasks[int(index)]
        try:
            library.add(sim.learn_skill(task))
        except RuntimeError as e:
            failures += 1
            logger.warning(f"Pretraining on task {task.id} failed ({e}); resampling")
            if failures > max_retries:
                raise PretrainingError(f"Gave up after {failures} failed pretraining attempts") from e

    if len(library) < k:
        raise PretrainingError(f"Only {len(library)} of {k} skills could be learned")
    logger.info(f"Pretrained library with {k} skills: {library.provenance}")
    return library


# ============================================================================
# JSON FILES
# ============================================================================

def task_to_dict(task: Task) -> dict:
    entry = {
        "id": task.id,
        "features": [float(v) for v in task.features],
        "size_cm": [float(task.size_cm[0]), float(task.size_cm[1])],
        "costs": task.costs.to_dict(),
    }
    if task.grid is not None:
        entry["grid"] = ["".join("1" if cell else "0" for cell in row) for row in task.grid]
        entry["grasp"] = [int(task.grasp_cell[0]), int(task.grasp_cell[1])]
    if task.family is not None:
        entry["family"] = task.family
    return entry


def task_from_dict(entry: dict) -> Task:
    grid = None
    grasp = None
    if "grid" in entry:
        grid = np.array([[ch == "1" for ch in row] for row in entry["grid"]], dtype=bool)
        grasp = (int(entry["grasp"][0]), int(entry["grasp"][1]))
    return Task(
        id=int(entry["id"]),
        features=np.asarray(entry["features"], dtype=float),
        size_cm=(float(entry["size_cm"][0]), float(entry["size_cm"][1])),
        costs=CostVector.from_dict(entry["costs"]),
        grid=grid,
        grasp_cell=grasp,
        family=entry.get("family"),
    )


def save_tasks(tasks: Sequence[Task], path: str):
    with open(path, "w") as f:
        json.dump([task_to_dict(task) for task in tasks], f, indent=2)
    logger.info(f"Task set saved: {path} ({len(tasks)} tasks)")


def load_tasks(path: str) -> List[Task]:
    with open(path) as f:
        entries = json.load(f)
    tasks = [task_from_dict(entry) for entry in entries]
    dims = {len(task.features) for task in tasks}
    if len(dims) > 1:
        raise ValueError(f"Inconsistent feature dimensions in {path}: {sorted(dims)}")
    return tasks


def save_library(library: SkillLibrary, path: str):
    data = {
        "skills": [
            {
                "trained_on": skill.trained_on,
                "taps": [[float(r), float(c)] for r, c in skill.taps],
                "frame_size_cm": [float(v) for v in skill.frame_size_cm],
                "train_features": [float(v) for v in skill.train_features],
            }
            for skill in library.skills
        ],
        "provenance": list(library.provenance),
    }
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
    logger.info(f"Skill library saved: {path} ({len(library)} skills)")


def load_library(path: str) -> SkillLibrary:
    with open(path) as f:
        data = json.load(f)
    library = SkillLibrary()
    for entry in data["skills"]:
        library.add(Skill(
            taps=tuple((float(r), float(c)) for r, c in entry["taps"]),
            trained_on=int(entry["trained_on"]),
            frame_size_cm=(float(entry["frame_size_cm"][0]), float(entry["frame_size_cm"][1])),
            train_features=tuple(float(v) for v in entry.get("train_features", [])),
        ))
    return library
