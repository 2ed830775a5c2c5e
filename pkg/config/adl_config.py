"""
ADL Planner Configuration

Environment-driven settings plus the typed configuration models shared by
the simulators, the precondition model, the baselines and the bench harness.
"""

import json
import os
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

DEFAULT_COSTS = {"c_rob": 10.0, "c_hum": 100.0, "c_demo": 200.0, "c_fail": 100.0}

SEMANTICS_MODES = ("mdp_consistent", "literal_paper")
MODE_ALIASES = {"mdp": "mdp_consistent", "literal": "literal_paper"}


def normalize_mode(mode: str) -> str:
    """Accept the short CLI spellings (mdp/literal) as well as the full mode names."""
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in SEMANTICS_MODES:
        raise ValueError(f"Unknown semantics mode '{mode}', expected one of {SEMANTICS_MODES}")
    return mode


class ADLSettings:
    """
    Process-wide settings read from the environment (and a local .env file).

    ADL_LOG_LEVEL   - logging level for the CLI (default WARNING)
    ADL_OUTPUT_ROOT - root directory for generated run folders (default output)
    ADL_MC_TRIALS   - default Monte Carlo trial count (default 1000)
    """

    def __init__(self):
        load_dotenv()
        self.log_level = os.getenv('ADL_LOG_LEVEL', 'WARNING').upper()
        self.output_root = os.getenv('ADL_OUTPUT_ROOT', 'output')

        trials = os.getenv('ADL_MC_TRIALS', '1000')
        try:
            self.mc_trials = int(trials)
        except ValueError:
            raise ValueError(f"ADL_MC_TRIALS must be an integer, got '{trials}'")
        if self.mc_trials < 1:
            raise ValueError(f"ADL_MC_TRIALS must be >= 1, got {self.mc_trials}")

        if not isinstance(logging.getLevelName(self.log_level), int):
            raise ValueError(f"ADL_LOG_LEVEL '{self.log_level}' is not a logging level")

        logger.info(f"Settings loaded (log_level={self.log_level}, output_root={self.output_root})")

    @property
    def numeric_log_level(self) -> int:
        return logging.getLevelName(self.log_level)


# Global settings instance
_adl_settings = None


def get_adl_settings() -> ADLSettings:
    """Get global settings instance."""
    global _adl_settings
    if _adl_settings is None:
        _adl_settings = ADLSettings()
    return _adl_settings


def reset_adl_settings():
    """Drop the cached settings so the next call re-reads the environment."""
    global _adl_settings
    _adl_settings = None


def validate_adl_setup() -> Dict[str, Any]:
    """Validate the environment setup and return status."""
    try:
        settings = get_adl_settings()
        try:
            from ortools.linear_solver import pywraplp  # noqa: F401
            ortools_available = True
        except ImportError:
            ortools_available = False

        return {
            'status': 'success',
            'log_level': settings.log_level,
            'output_root': settings.output_root,
            'mc_trials': settings.mc_trials,
            'ortools_available': ortools_available,
            'message': 'ADL configuration validated successfully'
        }
    except Exception as e:
        return {
            'status': 'error',
            'error': str(e),
            'message': 'ADL configuration validation failed'
        }


# ============================================================================
# TYPED CONFIGS
# ============================================================================

class CostConfig(BaseModel):
    c_rob: float = Field(DEFAULT_COSTS["c_rob"], ge=0)
    c_hum: float = Field(DEFAULT_COSTS["c_hum"], ge=0)
    c_demo: float = Field(DEFAULT_COSTS["c_demo"], ge=0)
    c_fail: float = Field(DEFAULT_COSTS["c_fail"], ge=0)


class SimConfig(BaseModel):
    """Coverage simulator parameters (hard-disk tap effect)."""
    tap_radius_cm: float = Field(3.0, gt=0)
    max_taps: int = Field(500, gt=0)
    coverage_threshold: float = Field(1.0, gt=0, le=1)
    seed: int = 0


class InsertionConfig(BaseModel):
    """Block-insertion transfer parameters."""
    transfer_radius_cm: float = Field(4.0, gt=0)
    noise_cm: float = Field(0.3, ge=0)
    seed: int = 0


class TrainConfig(BaseModel):
    hidden_size: int = Field(32, gt=0)
    learning_rate: float = Field(1e-3, gt=0)
    epochs: int = Field(200, gt=0)
    batch_size: int = Field(32, gt=0)
    weight_decay: float = Field(1e-4, gt=0)
    seed: int = 0
    validation_split: float = Field(0.2, gt=0, lt=1)


class CbaConfig(BaseModel):
    theta: float = Field(0.2, ge=0, le=1)


class ExperimentConfig(BaseModel):
    """One bench run: a ground task set, pretraining levels, seeds and the methods' knobs."""
    domain: Literal["block", "grid_part"]
    n_tasks: int = Field(gt=0)
    pretrain_levels: List[int]
    seeds: List[int]
    costs: CostConfig = Field(default_factory=CostConfig)
    cba_thetas: List[float] = Field(default_factory=lambda: [0.2, 0.5])
    mode: str = "mdp_consistent"
    output_dir: Optional[str] = None

    ground_count: int = Field(150, gt=0)
    families: int = Field(15, gt=0)
    env_count: int = Field(4, gt=0)
    root_seed: int = 0
    train_m: int = Field(50, gt=0)
    train_n: int = Field(30, gt=0)
    mc_trials: Optional[int] = Field(None, gt=0)
    pretrain_overlap: Literal["allow", "exclude"] = "exclude"
    check_oracles: bool = False
    gap_tolerance: float = Field(0.0, ge=0)
    cost_sweep: List[CostConfig] = Field(default_factory=list)

    sim: SimConfig = Field(default_factory=SimConfig)
    insertion: InsertionConfig = Field(default_factory=InsertionConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @field_validator("seeds")
    @classmethod
    def _seeds_nonempty(cls, seeds):
        if not seeds:
            raise ValueError("seeds must be nonempty")
        return seeds

    @field_validator("pretrain_levels")
    @classmethod
    def _levels_nonnegative(cls, levels):
        if not levels:
            raise ValueError("pretrain_levels must be nonempty")
        if any(level < 0 for level in levels):
            raise ValueError("pretrain_levels must be >= 0")
        return levels

    @field_validator("cba_thetas")
    @classmethod
    def _thetas_in_range(cls, thetas):
        for theta in thetas:
            if not 0.0 <= theta <= 1.0:
                raise ValueError(f"cba theta {theta} outside [0, 1]")
        return thetas

    @field_validator("mode")
    @classmethod
    def _known_mode(cls, mode):
        return normalize_mode(mode)

    @model_validator(mode="after")
    def _levels_fit_pool(self):
        if self.n_tasks > self.ground_count:
            raise ValueError(f"n_tasks ({self.n_tasks}) exceeds ground_count ({self.ground_count})")
        available = self.ground_count - (self.n_tasks if self.pretrain_overlap == "exclude" else 0)
        if max(self.pretrain_levels) > available:
            raise ValueError(f"pretrain level {max(self.pretrain_levels)} exceeds the {available} "
                             f"tasks available for pretraining")
        return self


def load_experiment_config(path: str) -> ExperimentConfig:
    """Load an ExperimentConfig from JSON, or YAML when the suffix says so."""
    suffix = Path(path).suffix.lower()
    with open(path) as f:
        if suffix in (".yaml", ".yml"):
            data = yaml.safe_load(f)
        else:
            data = json.load(f)
    if data is None:
        data = {}
    return ExperimentConfig.model_validate(data)
