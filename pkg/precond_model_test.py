"""Precondition model: predictions, training, gradient check and model files."""

import json
import logging

import numpy as np
import pandas as pd
import pytest

from config.adl_config import TrainConfig
from coverage_sim import CoverageSimulator, feature_columns, get_training_data
from precond_model import (
    MODEL_VERSION,
    DimensionMismatchError,
    EmptyDatasetError,
    ModelFormatError,
    ModelVersionError,
    PreconditionModel,
    calibration_table,
    dataset_arrays,
    grad_check,
    load_model,
    model_to_dict,
    predict,
    save_model,
    train,
)
from task_domain import generate_block_tasks, generate_grid_part_tasks


def frame(train_rows, test_rows, labels):
    """Training-data frame from explicit feature rows."""
    train_rows = np.atleast_2d(np.asarray(train_rows, dtype=float))
    test_rows = np.atleast_2d(np.asarray(test_rows, dtype=float))
    train_cols, test_cols = feature_columns(train_rows.shape[1])
    data = {"train_id": np.arange(len(labels)), "test_id": np.arange(len(labels))}
    data.update({c: train_rows[:, d] for d, c in enumerate(train_cols)})
    data.update({c: test_rows[:, d] for d, c in enumerate(test_cols)})
    data["label"] = np.asarray(labels, dtype=int)
    return pd.DataFrame(data)


def noisy_frame(rng, rows=60, dims=3):
    train_rows = rng.normal(size=(rows, dims))
    test_rows = rng.normal(size=(rows, dims))
    labels = (train_rows[:, 0] * test_rows[:, 0] > 0).astype(int)
    return frame(train_rows, test_rows, labels)


# ============================================================================
# PREDICTION
# ============================================================================

def test_zero_model_predicts_one_half():
    model = PreconditionModel.zeros(feature_dims=7, hidden_size=4)
    tasks = generate_block_tasks(3, seed=0, env_count=4)
    assert predict(model, tasks[0], tasks[1]) == 0.5


def test_predictions_stay_inside_the_unit_interval(rng):
    model = PreconditionModel.initialize(3, 16, rng)
    probs = model.predict_pairs(np.full(3, 1e6), np.full((5, 3), -1e6))
    assert probs.shape == (5,)
    assert np.all((probs > 0.0) & (probs < 1.0))


def test_dimension_mismatch_is_rejected(rng):
    model = PreconditionModel.initialize(7, 4, rng)
    grid_tasks = generate_grid_part_tasks(2, seed=0, shape_family_count=1)
    with pytest.raises(DimensionMismatchError):
        predict(model, grid_tasks[0], grid_tasks[1])
    with pytest.raises(DimensionMismatchError):
        model.predict_proba(np.zeros((2, 13)))


# ============================================================================
# TRAINING
# ============================================================================

def test_single_pair_loss_decreases_monotonically():
    data = frame([[1.0, 2.0]], [[3.0, 4.0]], [1])
    model = train(data, TrainConfig(epochs=10, learning_rate=1e-3, seed=0))
    history = model.report.history
    assert len(history) == 10
    assert all(later <= earlier + 1e-12 for earlier, later in zip(history, history[1:]))


def test_separable_pair_is_learned():
    data = frame([[0.0, 0.0], [1.0, 1.0]], [[0.0, 0.0], [1.0, 1.0]], [1, 0])
    model = train(data, TrainConfig(epochs=200, learning_rate=1e-2, hidden_size=16, seed=0))
    assert model.report.val_accuracy == 1.0


def test_training_is_deterministic(tmp_path, rng):
    data = noisy_frame(rng)
    cfg = TrainConfig(epochs=15, hidden_size=8, seed=42)
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    save_model(train(data, cfg), str(first))
    save_model(train(data, cfg), str(second))
    assert first.read_bytes() == second.read_bytes()


def test_training_reports_held_out_metrics(rng):
    model = train(noisy_frame(rng, rows=80), TrainConfig(epochs=30, hidden_size=8, seed=1))
    report = model.report.to_dict()
    assert report["rows"] == 80
    assert 0.0 <= report["val_accuracy"] <= 1.0
    assert 0.0 <= report["val_auc"] <= 1.0


def test_empty_dataset_is_rejected():
    train_cols, test_cols = feature_columns(2)
    empty = pd.DataFrame(columns=["train_id", "test_id"] + train_cols + test_cols + ["label"])
    with pytest.raises(EmptyDatasetError):
        train(empty)


def test_single_class_dataset_trains_with_warning(caplog):
    data = frame([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]], [[1.0, 1.0], [0.0, 0.0], [2.0, 1.0]], [0, 0, 0])
    with caplog.at_level(logging.WARNING, logger="precond_model"):
        model = train(data, TrainConfig(epochs=5, seed=0))
    assert "single class" in caplog.text
    assert np.isnan(model.report.val_auc)


def test_calibration_table_counts_every_row(rng):
    data = noisy_frame(rng, rows=40)
    model = train(data, TrainConfig(epochs=5, hidden_size=4, seed=0))
    table = calibration_table(model, data)
    assert len(table) == 10
    assert table["count"].sum() == 40


# ============================================================================
# GRADIENT CHECK
# ============================================================================

def test_grad_check_on_random_models():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        model = PreconditionModel.initialize(3, 5, rng)
        model.b1 = rng.normal(0.0, 0.1, size=5)
        model.b2 = np.asarray(rng.normal())
        sample = (rng.normal(size=6), float(rng.integers(0, 2)))
        assert grad_check(model, sample, epsilon=1e-5) < 1e-4


def test_grad_check_handles_all_zero_weights():
    model = PreconditionModel.zeros(feature_dims=3, hidden_size=4)
    assert grad_check(model, (np.ones(6), 1.0)) < 1e-4


def test_grad_check_is_stable_when_epsilon_doubles(rng):
    model = PreconditionModel.initialize(4, 6, rng)
    sample = (rng.normal(size=8), 1.0)
    small = grad_check(model, sample, epsilon=1e-5)
    large = grad_check(model, sample, epsilon=2e-5)
    assert large <= 10 * max(small, 1e-8)


def test_grad_check_epsilon_range():
    model = PreconditionModel.zeros(feature_dims=2, hidden_size=2)
    for epsilon in (1e-8, 1e-2):
        with pytest.raises(ValueError):
            grad_check(model, (np.zeros(4), 0.0), epsilon=epsilon)


def test_grad_check_leaves_model_untouched(rng):
    model = PreconditionModel.initialize(3, 5, rng)
    before = {name: value.copy() for name, value in model.params().items()}
    grad_check(model, (rng.normal(size=6), 0.0))
    for name, value in model.params().items():
        assert np.array_equal(before[name], value)


# ============================================================================
# MODEL FILES
# ============================================================================

def test_save_load_gives_identical_predictions(tmp_path, rng):
    model = train(noisy_frame(rng), TrainConfig(epochs=10, hidden_size=8, seed=3))
    path = tmp_path / "model.json"
    save_model(model, str(path))
    loaded = load_model(str(path))
    X = rng.normal(size=(25, 6))
    assert np.array_equal(model.predict_proba(X), loaded.predict_proba(X))

    again = tmp_path / "again.json"
    save_model(loaded, str(again))
    assert path.read_bytes() == again.read_bytes()


def test_truncated_model_file_is_a_format_error(tmp_path, rng):
    path = tmp_path / "model.json"
    save_model(PreconditionModel.initialize(3, 4, rng), str(path))
    text = path.read_text()
    path.write_text(text[:len(text) // 2])
    with pytest.raises(ModelFormatError):
        load_model(str(path))


def test_unknown_model_version_is_rejected(tmp_path, rng):
    data = model_to_dict(PreconditionModel.initialize(3, 4, rng))
    data["version"] = MODEL_VERSION + 1
    path = tmp_path / "model.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ModelVersionError):
        load_model(str(path))


def test_inconsistent_layer_shapes_are_rejected(tmp_path, rng):
    data = model_to_dict(PreconditionModel.initialize(3, 4, rng))
    data["layer2"]["W"] = data["layer2"]["W"][:-1]
    path = tmp_path / "model.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ModelFormatError):
        load_model(str(path))


# ============================================================================
# DESK-SCALE QUALITY
# ============================================================================

@pytest.mark.slow
def test_grid_part_model_separates_transfer_labels():
    tasks = generate_grid_part_tasks(150, seed=0, shape_family_count=15)
    data = get_training_data(150, 150, tasks, CoverageSimulator(), seed=0)
    model = train(data, TrainConfig(seed=0))
    auc = model.report.val_auc
    if not auc >= 0.8:
        print(calibration_table(model, data).to_string(index=False))
    assert auc >= 0.8, f"held-out AUC {auc:.4f} below 0.8 (report: {model.report.to_dict()})"

    X, _ = dataset_arrays(data)
    assert X.shape[1] == 132
    same = np.mean([predict(model, task, task) for task in tasks[:30]])
    other_family = np.mean([predict(model, tasks[i], tasks[(i + 75) % 150]) for i in range(30)])
    assert same > other_family
