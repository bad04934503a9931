"""Losses, Adam, dropout, the mini-batch training loop, and grid search.

Focal loss FL = -alpha_y (1 - p_y)^gamma ln(p_y); gamma = 0 recovers plain
cross-entropy. Gradients are taken directly w.r.t. the logits through the
softmax,'re hand-derived, and covered by the finite-difference checker.

Determinism contract: given identical data, config, and seed, training
produces bit-identical models and histories. Shuffling, dropout, and
parameter init each use an independent generator derived from the config
seed, so e.g. changing the dropout rate does not perturb the data order.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field, asdict, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import fusion, metrics
from .data import Dataset, N_CLASSES
from .errors import ConfigError, DimensionError, DivergenceError, DomainError, InputError

PROB_FLOOR = 1e-12

LEARNING_RATE_GRID = (1e-2, 1e-3, 1e-4, 1e-5)
DROPOUT_GRID = (0.0, 0.2, 0.5)
GAMMA_GRID = (2.0, 3.0, 4.0)

SELECTION_METRICS = ("macro_f1", "weighted_f1", "accuracy")
LOSS_KINDS = ("focal", "cross_entropy")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    focal_gamma: float = 2.0
    dropout_rate: float = 0.0
    loss_kind: str = "focal"
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    seed: int = 42
    selection_metric: str = "macro_f1"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.focal_gamma < 0:
            raise ConfigError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.selection_metric not in SELECTION_METRICS:
            raise ConfigError(
                f"selection_metric must be one of {SELECTION_METRICS}, got {self.selection_metric!r}")

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(asdict(self), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**payload)

    def effective_gamma(self) -> float:
        return self.focal_gamma if self.loss_kind == "focal" else 0.0


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _check_label(label: int) -> int:
    if label not in range(N_CLASSES):
        raise DomainError(f"label must be in 0..{N_CLASSES - 1}, got {label}")
    return label


def focal_loss(probs: Sequence[float], label: int, gamma: float,
               class_weights: Optional[Sequence[float]] = None) -> float:
    """-alpha_label (1 - p_label)^gamma ln(p_label), alpha defaulting to 1."""
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    if probs.shape[0] != N_CLASSES:
        raise DimensionError(f"probs must have length {N_CLASSES}, got {probs.shape[0]}")
    if abs(probs.sum() - 1.0) > 1e-5:
        raise DomainError(f"probs must sum to 1 within 1e-5, got sum {probs.sum()!r}")
    _check_label(label)
    if gamma < 0:
        raise DomainError(f"gamma must be >= 0, got {gamma}")
    alpha = 1.0
    if class_weights is not None:
        weights = np.asarray(class_weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != N_CLASSES:
            raise DimensionError(f"class_weights must have length {N_CLASSES}")
        alpha = float(weights[label])
    p = max(float(probs[label]), PROB_FLOOR)
    return -alpha * (1.0 - p) ** gamma * math.log(p)


def cross_entropy(probs: Sequence[float], label: int) -> float:
    """-ln(p_label) with the same 1e-12 probability floor."""
    return focal_loss(probs, label, 0.0)


def focal_loss_batch(probs: np.ndarray, labels: np.ndarray, gamma: float,
                     class_weights: Optional[np.ndarray] = None):
    """Mean focal loss over a batch and its gradient w.r.t. the logits.

    probs must come from a row softmax of the logits; the returned gradient
    is d(mean loss)/d(logits), same dtype as probs.
    """
    n = probs.shape[0]
    idx = np.arange(n)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    p = np.clip(probs[idx, labels].astype(np.float64), PROB_FLOOR, 1.0)
    alpha = np.ones(n) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[labels]
    log_p = np.log(p)
    one_minus = 1.0 - p
    if gamma == 0.0:
        losses = -alpha * log_p
        g_times_p = -alpha * np.ones(n)  # dL/dp * p
    else:
        losses = -alpha * one_minus ** gamma * log_p
        # dL/dp * p = alpha * (gamma (1-p)^(gamma-1) p ln p - (1-p)^gamma);
        # the limit at p = 1 is 0 for every gamma > 0.
        om_safe = np.where(one_minus > 0.0, one_minus, 1.0)
        g_times_p = np.where(
            one_minus > 0.0,
            alpha * (gamma * om_safe ** (gamma - 1.0) * log_p * p - om_safe ** gamma),
            0.0)
    onehot = np.zeros_like(probs, dtype=np.float64)
    onehot[idx, labels] = 1.0
    d_logits = (g_times_p[:, np.newaxis] * (onehot - probs.astype(np.float64))) / n
    return float(losses.mean()), d_logits.astype(probs.dtype)


def inverse_frequency_weights(labels: Sequence[int]) -> np.ndarray:
    """Per-class alpha proportional to 1/count, normalized to mean 1."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=N_CLASSES).astype(np.float64)
    if (counts == 0).any():
        raise InputError("inverse_frequency_weights: every class needs at least one sample")
    weights = 1.0 / counts
    return weights * (N_CLASSES / weights.sum())


# ---------------------------------------------------------------------------
# Dropout
# ---------------------------------------------------------------------------

def dropout_apply(x: np.ndarray, rate: float, rng: Optional[np.random.Generator] = None,
                  training: bool = True) -> np.ndarray:
    """Inverted dropout: zero with probability `rate`, scale survivors by
    1/(1-rate). Identity when not training (or rate 0)."""
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must be in [0,1), got {rate}")
    x = np.asarray(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise InputError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype)
    return x * mask / np.dtype(x.dtype).type(1.0 - rate)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"grad {name}: shape {g.shape} != param shape {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_report: metrics.MetricsReport


HISTORY_COLUMNS = ("epoch", "train_loss", "val_accuracy", "val_macro_f1",
                   "val_weighted_f1", "f1_negative", "f1_neutral", "f1_positive")


@dataclass
class TrainHistory:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for rec in self.epochs:
            r = rec.val_report
            writer.writerow([rec.epoch, repr(rec.train_loss), repr(r.accuracy),
                             repr(r.macro_f1), repr(r.weighted_f1),
                             repr(float(r.f1[0])), repr(float(r.f1[1])), repr(float(r.f1[2]))])
        return out.getvalue()


def _dataset_arrays(dataset: Dataset, what: str):
    if len(dataset) == 0:
        raise InputError(f"{what} dataset is empty")
    return dataset.to_arrays()


def evaluate_model(model: fusion.FusionModel, xt, xv, labels) -> metrics.MetricsReport:
    probs = fusion.predict_batch(model, xt, xv)
    return metrics.evaluate(np.argmax(probs, axis=1), labels)


def train(model: fusion.FusionModel, train_set: Dataset, val_set: Dataset,
          config: TrainConfig,
          class_weights: Optional[np.ndarray] = None) -> Tuple[fusion.FusionModel, TrainHistory]:
    """Mini-batch Adam with per-epoch validation and early stopping.

    Returns the model restored to its best-validation epoch plus the full
    history. Improvement means a strict increase of the selection metric.
    """
    xt, xv, y = _dataset_arrays(train_set, "train")
    vxt, vxv, vy = _dataset_arrays(val_set, "val")
    gamma = config.effective_gamma()
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    state = AdamState.for_params(model.params)
    history = TrainHistory()
    best_metric = -math.inf
    best_params = None
    epochs_since_best = 0
    n = len(train_set)
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            probs, cache = fusion.forward_batch(
                model, xt[batch], xv[batch], train=True,
                dropout_rate=config.dropout_rate, rng=dropout_rng)
            loss, d_logits = focal_loss_batch(probs, y[batch], gamma, class_weights)
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}",
                    epoch=epoch, batch=start // config.batch_size)
            loss_sum += loss * len(batch)
            grads = fusion.backward_batch(model, cache, d_logits)
            adam_step(model.params, grads, state, config.learning_rate)
        val_report = evaluate_model(model, vxt, vxv, vy)
        history.epochs.append(EpochRecord(epoch, loss_sum / n, val_report))
        metric = val_report.value(config.selection_metric)
        if metric > best_metric:
            best_metric = metric
            best_params = {k: p.copy() for k, p in model.params.items()}
            history.best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break
    for name in model.params:
        model.params[name][...] = best_params[name]
    return model, history


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

@dataclass
class ParamGrid:
    kinds: Tuple[str, ...] = fusion.FusionKind.ALL
    learning_rates: Tuple[float, ...] = LEARNING_RATE_GRID
    dropout_rates: Tuple[float, ...] = DROPOUT_GRID
    gammas: Tuple[float, ...] = GAMMA_GRID

    def __post_init__(self):
        if not (self.kinds and self.learning_rates and self.dropout_rates and self.gammas):
            raise InputError("grid must be nonempty along every axis")

    def cells(self) -> List[Tuple[str, float, float, float]]:
        return [(kind, lr, dr, g)
                for kind in self.kinds
                for lr in self.learning_rates
                for dr in self.dropout_rates
                for g in self.gammas]


@dataclass
class GridCell:
    kind: str
    learning_rate: float
    dropout_rate: float
    focal_gamma: float
    metric: Optional[float]
    best_epoch: Optional[int]
    error: Optional[str] = None


@dataclass
class GridResult:
    cells: List[GridCell]
    best: Optional[GridCell]
    selection_metric: str

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["kind", "learning_rate", "dropout_rate", "focal_gamma",
                         self.selection_metric, "best_epoch", "error"])
        for c in self.cells:
            writer.writerow([c.kind, repr(c.learning_rate), repr(c.dropout_rate),
                             repr(c.focal_gamma),
                             "" if c.metric is None else repr(c.metric),
                             "" if c.best_epoch is None else c.best_epoch,
                             c.error or ""])
        return out.getvalue()


def grid_search(train_set: Dataset, val_set: Dataset, base_config: TrainConfig,
                grid: Optional[ParamGrid] = None) -> GridResult:
    """Exhaustive product over kinds x learning rates x dropouts x gammas.

    Per-cell failures are recorded and the sweep continues. The best cell
    maximizes the selection metric; ties keep the first cell encountered.
    """
    grid = grid or ParamGrid()
    cells: List[GridCell] = []
    best: Optional[GridCell] = None
    for kind, lr, dr, gamma in grid.cells():
        config = replace(base_config, learning_rate=lr, dropout_rate=dr, focal_gamma=gamma)
        try:
            model = fusion.init_params(kind, config.seed)
            _, history = train(model, train_set, val_set, config)
            best_rec = history.epochs[history.best_epoch - 1]
            cell = GridCell(kind, lr, dr, gamma,
                            metric=best_rec.val_report.value(config.selection_metric),
                            best_epoch=history.best_epoch)
        except Exception as exc:  # keep sweeping; the cell records its failure
            cell = GridCell(kind, lr, dr, gamma, metric=None, best_epoch=None,
                            error=f"{type(exc).__name__}: {exc}")
        cells.append(cell)
        if cell.metric is not None and (best is None or cell.metric > best.metric):
            best = cell
    return GridResult(cells=cells, best=best, selection_metric=base_config.selection_metric)
