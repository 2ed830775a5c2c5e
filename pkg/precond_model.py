"""
Precondition Prediction Model

Two-layer feed-forward classifier P(train task, test task) -> probability
that a skill learned on the first task succeeds on the second. Inputs are
the two feature vectors concatenated and standardized with statistics
frozen at training time.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score

from config.adl_config import TrainConfig
from task_domain import Task

logger = logging.getLogger(__name__)

MODEL_VERSION = 1
PROB_EPS = 1e-12
PARAM_NAMES = ("W1", "b1", "W2", "b2")


class DimensionMismatchError(ValueError):
    """Feature vectors do not match the model's input dimension."""


class ModelFormatError(ValueError):
    """A model file could not be parsed."""


class ModelVersionError(ModelFormatError):
    """A model file was written by an incompatible format version."""


class EmptyDatasetError(ValueError):
    """Training was requested on a dataset with no rows."""


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class TrainReport:
    rows: int
    positive_rate: float
    train_loss: float
    val_loss: float
    val_auc: float
    val_accuracy: float
    history: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "rows": self.rows,
            "positive_rate": self.positive_rate,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_auc": self.val_auc,
            "val_accuracy": self.val_accuracy,
        }


class PreconditionModel:
    """ReLU hidden layer, logistic output."""

    def __init__(self, W1: np.ndarray, b1: np.ndarray, W2: np.ndarray, b2: np.ndarray,
                 mean: np.ndarray, scale: np.ndarray):
        self.W1 = np.asarray(W1, dtype=float)
        self.b1 = np.asarray(b1, dtype=float)
        self.W2 = np.asarray(W2, dtype=float)
        self.b2 = np.asarray(b2, dtype=float)
        self.mean = np.asarray(mean, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.report: Optional[TrainReport] = None

        dims, hidden = self.W1.shape
        if self.b1.shape != (hidden,) or self.W2.shape != (hidden,) or self.b2.shape != ():
            raise ValueError(f"Inconsistent layer shapes: W1 {self.W1.shape}, b1 {self.b1.shape}, "
                             f"W2 {self.W2.shape}, b2 {self.b2.shape}")
        if self.mean.shape != (dims,) or self.scale.shape != (dims,):
            raise ValueError(f"Normalization statistics must have shape ({dims},)")
        if dims % 2:
            raise ValueError(f"Input dimension must be even (two feature vectors), got {dims}")

    @classmethod
    def zeros(cls, feature_dims: int, hidden_size: int = 32) -> "PreconditionModel":
        dims = 2 * feature_dims
        return cls(np.zeros((dims, hidden_size)), np.zeros(hidden_size), np.zeros(hidden_size), np.zeros(()),
                   np.zeros(dims), np.ones(dims))

    @classmethod
    def initialize(cls, feature_dims: int, hidden_size: int, rng: np.random.Generator,
                   mean: Optional[np.ndarray] = None, scale: Optional[np.ndarray] = None) -> "PreconditionModel":
        """He-initialized weights, zero biases."""
        dims = 2 * feature_dims
        W1 = rng.normal(0.0, np.sqrt(2.0 / dims), size=(dims, hidden_size))
        W2 = rng.normal(0.0, np.sqrt(2.0 / hidden_size), size=hidden_size)
        return cls(W1, np.zeros(hidden_size), W2, np.zeros(()),
                   np.zeros(dims) if mean is None else mean, np.ones(dims) if scale is None else scale)

    @property
    def input_dims(self) -> int:
        return self.W1.shape[0]

    @property
    def feature_dims(self) -> int:
        return self.input_dims // 2

    @property
    def hidden_size(self) -> int:
        return self.W1.shape[1]

    def params(self) -> Dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def normalize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale

    def logits(self, Xn: np.ndarray) -> np.ndarray:
        hidden = np.maximum(Xn @ self.W1 + self.b1, 0.0)
        return hidden @ self.W2 + self.b2

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Success probabilities for raw concatenated feature rows, clipped inside (0, 1)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dims:
            raise DimensionMismatchError(f"Expected {self.input_dims} input features, got {X.shape[1]}")
        return np.clip(_sigmoid(self.logits(self.normalize(X))), PROB_EPS, 1.0 - PROB_EPS)

    def predict_pairs(self, train_features: np.ndarray, test_features: np.ndarray) -> np.ndarray:
        train_features = np.atleast_2d(np.asarray(train_features, dtype=float))
        test_features = np.atleast_2d(np.asarray(test_features, dtype=float))
        for block in (train_features, test_features):
            if block.shape[1] != self.feature_dims:
                raise DimensionMismatchError(
                    f"Model expects {self.feature_dims}-D task features, got {block.shape[1]}-D")
        train_features, test_features = np.broadcast_arrays(train_features, test_features)
        return self.predict_proba(np.hstack([train_features, test_features]))

    def loss_and_grads(self, Xn: np.ndarray, y: np.ndarray, weights: Optional[np.ndarray] = None,
                       weight_decay: float = 0.0) -> Tuple[float, Dict[str, np.ndarray]]:
        """
        Weighted-mean binary cross-entropy plus 0.5 * weight_decay * (|W1|^2 + |W2|^2).

        Args:
            Xn: normalized inputs, shape (rows, input_dims)
            y: labels in {0, 1}
            weights: per-row sample weights (default 1)
            weight_decay: L2 coefficient on weight matrices

        Returns:
            (loss, gradients keyed like params())
        """
        weights = np.ones(len(y)) if weights is None else weights
        total = weights.sum()

        z1 = Xn @ self.W1 + self.b1
        hidden = np.maximum(z1, 0.0)
        z2 = hidden @ self.W2 + self.b2
        data_loss = float((weights * (np.logaddexp(0.0, z2) - y * z2)).sum() / total)
        reg = 0.5 * weight_decay * (float((self.W1 ** 2).sum()) + float((self.W2 ** 2).sum()))

        dz2 = weights * (_sigmoid(z2) - y) / total
        dhidden = np.outer(dz2, self.W2)
        dhidden[z1 <= 0] = 0.0
        grads = {
            "W1": Xn.T @ dhidden + weight_decay * self.W1,
            "b1": dhidden.sum(axis=0),
            "W2": hidden.T @ dz2 + weight_decay * self.W2,
            "b2": np.asarray(dz2.sum()),
        }
        return data_loss + reg, grads

    def copy(self) -> "PreconditionModel":
        return PreconditionModel(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(),
                                 self.mean.copy(), self.scale.copy())


def predict(model: PreconditionModel, train_task: Task, test_task: Task) -> float:
    """Probability that a skill learned on train_task succeeds on test_task."""
    return float(model.predict_pairs(train_task.features, test_task.features)[0])


# ============================================================================
# TRAINING
# ============================================================================

def dataset_arrays(dataset: pd.DataFrame) -> Tuple[np.ndarray, np.ndarray]:
    """Concatenated (train, test) feature rows and labels from a training-data frame."""
    train_cols = sorted((c for c in dataset.columns if c.startswith("feat_train_")),
                        key=lambda c: int(c.rsplit("_", 1)[1]))
    test_cols = sorted((c for c in dataset.columns if c.startswith("feat_test_")),
                       key=lambda c: int(c.rsplit("_", 1)[1]))
    if len(train_cols) != len(test_cols):
        raise DimensionMismatchError(f"{len(train_cols)} train vs {len(test_cols)} test feature columns")
    X = dataset[train_cols + test_cols].to_numpy(dtype=float)
    y = dataset["label"].to_numpy(dtype=float)
    return X, y


def _sample_weights(y: np.ndarray) -> np.ndarray:
    rate = float(y.mean())
    if 0.2 <= rate <= 0.8 or rate in (0.0, 1.0):
        return np.ones(len(y))
    # Inverse class frequency, normalized to mean 1
    return np.where(y > 0.5, 0.5 / rate, 0.5 / (1.0 - rate))


def _evaluate(model: PreconditionModel, X: np.ndarray, y: np.ndarray) -> Tuple[float, float, float]:
    probs = model.predict_proba(X)
    loss = float(np.mean(-(y * np.log(probs) + (1 - y) * np.log(1 - probs))))
    accuracy = float(np.mean((probs >= 0.5) == (y > 0.5)))
    if len(np.unique(y)) < 2:
        auc = float("nan")
    else:
        auc = float(roc_auc_score(y, probs))
    return loss, auc, accuracy


def train(dataset: pd.DataFrame, cfg: Optional[TrainConfig] = None) -> PreconditionModel:
    """
    Fit the precondition model with minibatch Adam on weighted cross-entropy.

    Datasets of fewer than 10 rows are not split; validation metrics are then
    computed on the training rows. The returned model carries a TrainReport
    in `model.report`.

    Raises:
        EmptyDatasetError: no rows
    """
    cfg = cfg or TrainConfig()
    if dataset is None or len(dataset) == 0:
        raise EmptyDatasetError("Cannot train a precondition model on an empty dataset")

    X, y = dataset_arrays(dataset)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("Labels must be binary (0/1)")
    if len(np.unique(y)) < 2:
        logger.warning(f"Training data has a single class (label={int(y[0])}); predictions will be degenerate")

    rng = np.random.default_rng(cfg.seed)
    rows = len(y)
    if rows >= 10:
        order = rng.permutation(rows)
        n_val = max(1, int(round(cfg.validation_split * rows)))
        val_idx, train_idx = order[:n_val], order[n_val:]
    else:
        train_idx = val_idx = np.arange(rows)

    X_train, y_train = X[train_idx], y[train_idx]
    mean = X_train.mean(axis=0)
    scale = X_train.std(axis=0)
    scale[scale < 1e-12] = 1.0

    model = PreconditionModel.initialize(X.shape[1] // 2, cfg.hidden_size, rng, mean=mean, scale=scale)
    Xn = model.normalize(X_train)
    weights = _sample_weights(y_train)

    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    moments = {name: np.zeros_like(p) for name, p in model.params().items()}
    velocities = {name: np.zeros_like(p) for name, p in model.params().items()}
    step = 0
    history = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(y_train))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, grads = model.loss_and_grads(Xn[batch], y_train[batch], weights[batch], cfg.weight_decay)
            step += 1
            for name, param in model.params().items():
                moments[name] = beta1 * moments[name] + (1 - beta1) * grads[name]
                velocities[name] = beta2 * velocities[name] + (1 - beta2) * grads[name] ** 2
                m_hat = moments[name] / (1 - beta1 ** step)
                v_hat = velocities[name] / (1 - beta2 ** step)
                param -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)

        epoch_loss, _ = model.loss_and_grads(Xn, y_train, weights, cfg.weight_decay)
        history.append(epoch_loss)
        if (epoch + 1) % 50 == 0:
            logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: train loss {epoch_loss:.5f}")

    train_loss, _, _ = _evaluate(model, X_train, y_train)
    val_loss, val_auc, val_accuracy = _evaluate(model, X[val_idx], y[val_idx])
    model.report = TrainReport(
        rows=rows,
        positive_rate=float(y.mean()),
        train_loss=train_loss,
        val_loss=val_loss,
        val_auc=val_auc,
        val_accuracy=val_accuracy,
        history=history,
    )
    logger.info(f"✅ Precondition model trained: {rows} rows, val loss {val_loss:.4f}, "
                f"val AUC {val_auc:.4f}, val accuracy {val_accuracy:.4f}")
    return model


def calibration_table(model: PreconditionModel, dataset: pd.DataFrame, bins: int = 10) -> pd.DataFrame:
    """Mean predicted vs empirical success per equal-width probability bin."""
    X, y = dataset_arrays(dataset)
    probs = model.predict_proba(X)
    edges = np.linspace(0.0, 1.0, bins + 1)
    index = np.clip(np.digitize(probs, edges[1:-1]), 0, bins - 1)
    frame = pd.DataFrame({"bin": index, "predicted": probs, "label": y})
    table = frame.groupby("bin").agg(count=("label", "size"), mean_predicted=("predicted", "mean"),
                                     empirical_rate=("label", "mean"))
    table = table.reindex(range(bins))
    table["count"] = table["count"].fillna(0).astype(int)
    table.insert(0, "lo", edges[:-1])
    table.insert(1, "hi", edges[1:])
    return table.reset_index()


# ============================================================================
# GRADIENT CHECK
# ============================================================================

def grad_check(model: PreconditionModel, sample: Tuple[np.ndarray, float], epsilon: float = 1e-5,
               weight_decay: float = 1e-4) -> float:
    """
    Max relative error between backprop and central finite differences.

    Uses the unweighted single-sample loss with the weight-decay term. Hidden
    units whose pre-activation lies within one step of the ReLU kink are left
    out of the comparison for their incoming weights.

    Args:
        model: model to check (not modified)
        sample: (raw concatenated features, label)
        epsilon: finite-difference step in [1e-7, 1e-3]
        weight_decay: L2 coefficient used in the loss

    Returns:
        max over parameters of |a - n| / max(|a|, |n|, 1e-8)
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must be in [1e-7, 1e-3], got {epsilon}")

    features, label = sample
    Xn = model.normalize(np.atleast_2d(np.asarray(features, dtype=float)))
    if Xn.shape[1] != model.input_dims:
        raise DimensionMismatchError(f"Expected {model.input_dims} input features, got {Xn.shape[1]}")
    y = np.asarray([float(label)])

    work = model.copy()
    _, analytic = work.loss_and_grads(Xn, y, weight_decay=weight_decay)

    z1 = (Xn @ work.W1 + work.b1)[0]
    reach = epsilon * max(1.0, float(np.abs(Xn).max()))
    near_kink = np.abs(z1) <= reach
    if near_kink.any():
        logger.info(f"grad_check: skipping {int(near_kink.sum())} hidden unit(s) at the ReLU kink")

    def data_loss():
        loss, _ = work.loss_and_grads(Xn, y, weight_decay=0.0)
        return loss

    worst = 0.0
    for name in PARAM_NAMES:
        param = work.params()[name]
        flat = param.reshape(-1)
        for index in range(flat.size):
            if name == "W1" and near_kink[index % work.hidden_size]:
                continue
            if name == "b1" and near_kink[index]:
                continue
            original = flat[index]
            flat[index] = original + epsilon
            plus = data_loss()
            flat[index] = original - epsilon
            minus = data_loss()
            flat[index] = original

            numeric = (plus - minus) / (2 * epsilon)
            if name in ("W1", "W2"):
                numeric += 0.5 * weight_decay * ((original + epsilon) ** 2 - (original - epsilon) ** 2) / (2 * epsilon)
            exact = float(analytic[name].reshape(-1)[index])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, error)

    return worst


# ============================================================================
# SERIALIZATION
# ============================================================================

def model_to_dict(model: PreconditionModel) -> Dict:
    return {
        "version": MODEL_VERSION,
        "dims": model.input_dims,
        "hidden": model.hidden_size,
        "normalization": {"mean": model.mean.tolist(), "scale": model.scale.tolist()},
        "layer1": {"W": model.W1.tolist(), "b": model.b1.tolist()},
        "layer2": {"W": model.W2.tolist(), "b": float(model.b2)},
    }


def model_from_dict(data: Dict) -> PreconditionModel:
    if not isinstance(data, dict) or "version" not in data:
        raise ModelFormatError("Model file has no version field")
    if data["version"] != MODEL_VERSION:
        raise ModelVersionError(f"Model format version {data['version']} is not supported "
                                f"(expected {MODEL_VERSION})")
    try:
        model = PreconditionModel(
            W1=np.asarray(data["layer1"]["W"], dtype=float),
            b1=np.asarray(data["layer1"]["b"], dtype=float),
            W2=np.asarray(data["layer2"]["W"], dtype=float),
            b2=np.asarray(data["layer2"]["b"], dtype=float),
            mean=np.asarray(data["normalization"]["mean"], dtype=float),
            scale=np.asarray(data["normalization"]["scale"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"Malformed model file: {e}") from e
    if model.input_dims != data.get("dims"):
        raise ModelFormatError(f"dims field {data.get('dims')} disagrees with layer1 ({model.input_dims})")
    for name, param in model.params().items():
        if not np.isfinite(param).all():
            raise ModelFormatError(f"Non-finite values in {name}")
    return model


def save_model(model: PreconditionModel, path: str):
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f, indent=2)
    logger.info(f"Model saved: {path}")


def load_model(path: str) -> PreconditionModel:
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"Cannot parse model file {path}: {e}") from e
    return model_from_dict(data)
