"""Adam optimizer, mini-batch training loop, metrics and comparison reports.

Training is deterministic for a given seed: shuffles come from one PCG64
stream, the last partial batch is kept, and parameters update in the
model's layer order.  Frozen parameters are skipped entirely (no state).

Metrics follow the usual confusion-matrix conventions (rows = true class,
columns = predicted, argmax ties to the lowest class index); precision /
recall / F1 are macro-averaged with per-class F1 the harmonic mean of
that class's precision and recall.  Repeated-run summaries report the
arithmetic mean and population standard deviation per metric.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, SplitIndices, stratified_split
from .layers import cross_entropy_loss
from .model import ModelSpec, freeze_layers, model_forward
from .tensor import Tape, Tensor, backward

__all__ = [
    "TrainConfig",
    "AdamState",
    "adam_step",
    "TrainHistory",
    "TrainingDivergedError",
    "train_model",
    "MetricsReport",
    "metrics_from_confusion",
    "evaluate_model",
    "confusion_rates",
    "one_hot",
    "RepeatedRunResult",
    "run_repeated",
    "aggregate_metrics",
    "ComparisonTable",
    "compare_models",
]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 50
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    freeze_fraction: float = 0.7
    runs: int = 1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {value}")
        if self.eps_adam <= 0:
            raise ValueError(f"eps_adam must be > 0, got {self.eps_adam}")
        if not 0.0 <= self.freeze_fraction <= 1.0:
            raise ValueError(
                f"freeze_fraction must be in [0, 1], got {self.freeze_fraction}")
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: Tensor) -> "AdamState":
        return cls(m=np.zeros_like(param.data), v=np.zeros_like(param.data), t=0)


def adam_step(param: Tensor, grad: np.ndarray, state: AdamState,
              cfg: TrainConfig) -> AdamState:
    """One Adam update with bias correction; mutates param.data and the
    moment buffers in place and returns the advanced state."""
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise ValueError(
            f"shape mismatch: param {param.shape}, grad {grad.shape}, m {state.m.shape}")
    t = state.t + 1
    m, v = state.m, state.v
    m *= cfg.beta1
    m += (1.0 - cfg.beta1) * grad
    v *= cfg.beta2
    v += (1.0 - cfg.beta2) * (grad * grad)
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    np.sqrt(v_hat, out=v_hat)
    v_hat += cfg.eps_adam
    m_hat /= v_hat
    m_hat *= cfg.learning_rate
    param.data -= m_hat
    return AdamState(m=m, v=v, t=t)


# ---------------------------------------------------------------------------
# training loop

class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(
            f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("epoch,train_loss,train_acc,val_loss,val_acc\n")
            rows = zip(self.train_loss, self.train_acc, self.val_loss, self.val_acc)
            for epoch, row in enumerate(rows, start=1):
                f.write(f"{epoch},{row[0]!r},{row[1]!r},{row[2]!r},{row[3]!r}\n")


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    eye = np.eye(num_classes, dtype=dtype)
    return eye[np.asarray(labels)]


def _forward_batched(model: ModelSpec, params: dict[str, Tensor],
                     images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    chunks = []
    for start in range(0, len(images), batch_size):
        probs = model_forward(model, params, Tensor(images[start:start + batch_size]))
        chunks.append(probs.data)
    return np.concatenate(chunks, axis=0)


def _loss_and_accuracy(model, params, images, labels, num_classes) -> tuple[float, float]:
    probs = _forward_batched(model, params, images)
    loss = cross_entropy_loss(Tensor(probs), Tensor(one_hot(labels, num_classes)))
    correct = (probs.argmax(axis=1) == labels).sum()
    return float(loss.data), 100.0 * float(correct) / len(labels)


def train_model(model: ModelSpec, params: dict[str, Tensor], dataset: Dataset,
                split: SplitIndices, cfg: TrainConfig) -> tuple[dict[str, Tensor], TrainHistory]:
    """Mini-batch training with epoch-end evaluation on both splits.

    Each epoch reshuffles the training indices from the config seed's
    stream; the final partial batch is trained.  Frozen layers (trainable
    False) receive no optimizer updates.  Raises TrainingDivergedError on
    a non-finite loss.
    """
    rng = np.random.default_rng(cfg.seed)
    num_classes = model.num_classes
    trainable = [name for layer in model.layers if layer.trainable
                 for name in layer.param_names]
    states = {name: AdamState.zeros_like(params[name]) for name in trainable}
    history = TrainHistory()

    train_idx = np.asarray(split.train)
    test_idx = np.asarray(split.test)
    train_labels = dataset.labels[train_idx]
    test_labels = dataset.labels[test_idx]
    train_images = dataset.images[train_idx]
    test_images = dataset.images[test_idx]

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_idx))
        for batch_no, start in enumerate(range(0, len(order), cfg.batch_size), start=1):
            sel = order[start:start + cfg.batch_size]
            xb = Tensor(train_images[sel])
            yb = Tensor(one_hot(train_labels[sel], num_classes))
            with Tape() as tape:
                probs = model_forward(model, params, xb)
                loss = cross_entropy_loss(probs, yb)
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                raise TrainingDivergedError(epoch, batch_no, loss_value)
            for name in trainable:
                params[name].grad = None
            backward(loss, tape)
            for name in trainable:
                grad = params[name].grad
                if grad is None:
                    grad = np.zeros_like(params[name].data)
                states[name] = adam_step(params[name], grad, states[name], cfg)

        tr_loss, tr_acc = _loss_and_accuracy(model, params, train_images,
                                             train_labels, num_classes)
        va_loss, va_acc = _loss_and_accuracy(model, params, test_images,
                                             test_labels, num_classes)
        history.train_loss.append(tr_loss)
        history.train_acc.append(tr_acc)
        history.val_loss.append(va_loss)
        history.val_acc.append(va_acc)

    return params, history


# ---------------------------------------------------------------------------
# metrics

@dataclass
class MetricsReport:
    confusion: np.ndarray       # (k, k) ints, rows = true, cols = predicted
    accuracy_pct: float
    top1_error_pct: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f1: list[float]
    fpr_pct: float | None = None
    fnr_pct: float | None = None

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "accuracy_pct": self.accuracy_pct,
            "top1_error_pct": self.top1_error_pct,
            "precision_macro": self.precision_macro,
            "recall_macro": self.recall_macro,
            "f1_macro": self.f1_macro,
            "confusion": self.confusion.tolist(),
            "fpr_pct": self.fpr_pct,
            "fnr_pct": self.fnr_pct,
            "per_class": {
                "precision": self.per_class_precision,
                "recall": self.per_class_recall,
                "f1": self.per_class_f1,
            },
            "n": self.n,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [
            f"samples            {self.n}",
            f"accuracy (%)       {self.accuracy_pct:.4f}",
            f"top-1 error (%)    {self.top1_error_pct:.4f}",
            f"precision (macro)  {self.precision_macro:.5f}",
            f"recall (macro)     {self.recall_macro:.5f}",
            f"f1 (macro)         {self.f1_macro:.5f}",
        ]
        if self.fpr_pct is not None:
            lines.append(f"FPR (%)            {self.fpr_pct:.4f}")
            lines.append(f"FNR (%)            {self.fnr_pct:.4f}")
        lines.append("confusion (rows = true, cols = predicted):")
        for row in self.confusion:
            lines.append("  " + " ".join(f"{int(v):6d}" for v in row))
        return "\n".join(lines)


def metrics_from_confusion(confusion: np.ndarray) -> MetricsReport:
    confusion = np.asarray(confusion, dtype=np.int64)
    k = confusion.shape[0]
    if confusion.shape != (k, k):
        raise ValueError(f"confusion matrix must be square, got {confusion.shape}")
    total = int(confusion.sum())
    if total == 0:
        raise ValueError("confusion matrix is empty")
    diag = np.diag(confusion).astype(np.float64)
    col_sums = confusion.sum(axis=0).astype(np.float64)
    row_sums = confusion.sum(axis=1).astype(np.float64)
    precision = [float(diag[i] / col_sums[i]) if col_sums[i] else 0.0 for i in range(k)]
    recall = [float(diag[i] / row_sums[i]) if row_sums[i] else 0.0 for i in range(k)]
    f1 = [2.0 * p * r / (p + r) if (p + r) else 0.0 for p, r in zip(precision, recall)]
    accuracy = 100.0 * float(diag.sum()) / total
    report = MetricsReport(
        confusion=confusion,
        accuracy_pct=accuracy,
        top1_error_pct=100.0 - accuracy,
        precision_macro=float(np.mean(precision)),
        recall_macro=float(np.mean(recall)),
        f1_macro=float(np.mean(f1)),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
    )
    if k == 2 and row_sums.min() > 0:
        rates = confusion_rates(confusion)
        report.fpr_pct = rates["false_positive_rate"]
        report.fnr_pct = rates["false_negative_rate"]
    return report


def evaluate_model(model: ModelSpec, params: dict[str, Tensor], dataset: Dataset,
                   indices) -> MetricsReport:
    """Confusion matrix and derived metrics over the given sample indices."""
    indices = np.asarray(indices)
    if indices.size == 0:
        raise ValueError("cannot evaluate an empty index list")
    probs = _forward_batched(model, params, dataset.images[indices])
    preds = probs.argmax(axis=1)
    truth = dataset.labels[indices]
    k = model.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (truth, preds), 1)
    return metrics_from_confusion(confusion)


def confusion_rates(confusion: np.ndarray) -> dict[str, float]:
    """False positive/negative rates (percent) for a 2x2 matrix.

    Class 1 is the positive class; rows are true classes, so
    FPR = FP / (FP + TN) = c[0,1] / row 0 and
    FNR = FN / (FN + TP) = c[1,0] / row 1.
    """
    confusion = np.asarray(confusion)
    if confusion.shape != (2, 2):
        raise ValueError(f"confusion_rates expects a 2x2 matrix, got {confusion.shape}")
    negatives = confusion[0].sum()
    positives = confusion[1].sum()
    if negatives == 0 or positives == 0:
        raise ValueError("confusion matrix has a zero row sum")
    return {
        "false_positive_rate": 100.0 * float(confusion[0, 1]) / float(negatives),
        "false_negative_rate": 100.0 * float(confusion[1, 0]) / float(positives),
    }


# ---------------------------------------------------------------------------
# repeated runs and comparisons

_SUMMARY_METRICS = ("accuracy_pct", "top1_error_pct", "precision_macro",
                    "recall_macro", "f1_macro", "fpr_pct", "fnr_pct")


def aggregate_metrics(reports: list[MetricsReport]) -> tuple[dict, dict]:
    """Arithmetic mean and population standard deviation per metric."""
    if not reports:
        raise ValueError("no reports to aggregate")
    mean, std = {}, {}
    for key in _SUMMARY_METRICS:
        values = [getattr(r, key) for r in reports]
        if any(v is None for v in values):
            mean[key] = std[key] = None
            continue
        arr = np.asarray(values, dtype=np.float64)
        mean[key] = float(arr.mean())
        std[key] = float(arr.std())  # population convention (divide by R)
    return mean, std


@dataclass
class RepeatedRunResult:
    mean: dict
    std: dict
    reports: list[MetricsReport]
    histories: list[TrainHistory]
    seeds: list[int]
    best_index: int

    def to_text(self) -> str:
        lines = ["per-run test accuracy (%):"]
        for i, (seed, report) in enumerate(zip(self.seeds, self.reports)):
            marker = "  <- best" if i == self.best_index else ""
            lines.append(f"  run {i} (seed {seed}): {report.accuracy_pct:.2f}{marker}")
        lines.append("mean +- std (population):")
        for key in _SUMMARY_METRICS:
            if self.mean.get(key) is None:
                continue
            lines.append(f"  {key}: {self.mean[key]:.4f} +- {self.std[key]:.4f}")
        return "\n".join(lines)


def run_repeated(model_builder, dataset: Dataset, cfg: TrainConfig,
                 test_fraction: float = 0.2) -> RepeatedRunResult:
    """R independent seeded runs (seed_i = cfg.seed + i).

    Each run re-splits the dataset, rebuilds the model via
    ``model_builder(seed_i)``, applies the configured freeze fraction,
    trains, and evaluates on its test split.  The best run (highest
    accuracy, first on ties) is flagged.
    """
    reports, histories, seeds = [], [], []
    for i in range(cfg.runs):
        seed_i = cfg.seed + i
        seeds.append(seed_i)
        split = stratified_split(dataset.labels, test_fraction, seed_i)
        model, params = model_builder(seed_i)
        freeze_layers(model, cfg.freeze_fraction)
        run_cfg = replace(cfg, seed=seed_i)
        params, history = train_model(model, params, dataset, split, run_cfg)
        reports.append(evaluate_model(model, params, dataset, split.test))
        histories.append(history)
    mean, std = aggregate_metrics(reports)
    accuracies = np.asarray([r.accuracy_pct for r in reports])
    return RepeatedRunResult(mean=mean, std=std, reports=reports, histories=histories,
                             seeds=seeds, best_index=int(np.argmax(accuracies)))


@dataclass
class ComparisonTable:
    rows: list[tuple[str, dict]]  # sorted by accuracy descending, stable ties

    _COLUMNS = ("accuracy_pct", "top1_error_pct", "precision_macro",
                "recall_macro", "f1_macro")

    def to_text(self) -> str:
        name_width = max(len("model"), max(len(name) for name, _ in self.rows))
        header = f"{'model':<{name_width}}" + "".join(
            f"  {col:>15}" for col in self._COLUMNS)
        lines = [header]
        for name, metrics in self.rows:
            cells = "".join(
                f"  {metrics.get(col):>15.4f}" if metrics.get(col) is not None
                else f"  {'-':>15}" for col in self._COLUMNS)
            lines.append(f"{name:<{name_width}}{cells}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["model," + ",".join(self._COLUMNS)]
        for name, metrics in self.rows:
            cells = ",".join("" if metrics.get(col) is None else repr(metrics.get(col))
                             for col in self._COLUMNS)
            lines.append(f"{name},{cells}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            [{"model": name, **{c: metrics.get(c) for c in self._COLUMNS}}
             for name, metrics in self.rows],
            indent=2)


def compare_models(named_reports: list[tuple[str, MetricsReport | dict]]) -> ComparisonTable:
    """Rank named reports by accuracy, descending; ties keep input order."""
    if len(named_reports) < 2:
        raise ValueError("compare_models needs at least two named reports")
    names = [name for name, _ in named_reports]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate model names in comparison: {names}")
    rows = []
    for name, report in named_reports:
        metrics = report.to_dict() if isinstance(report, MetricsReport) else dict(report)
        rows.append((name, metrics))
    rows.sort(key=lambda item: -item[1]["accuracy_pct"])
    return ComparisonTable(rows=rows)
