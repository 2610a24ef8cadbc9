"""One-hidden-layer SELU classifier trained with Adam, plus evaluation helpers."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import CodedDataset, DataError, SplitSpec, smote, stratified_split

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    hidden_units: int = 28
    learning_rate: float = 0.0005
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.hidden_units < 1:
            raise TrainingError("hidden_units must be at least 1")
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise TrainingError("batch_size, max_epochs and patience must be positive")


def selu(x):
    x = np.asarray(x, dtype=np.float64)
    return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def selu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return SELU_LAMBDA * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class MlpModel:
    features: tuple[str, ...]
    target: str
    classes: tuple[str, ...]
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    config: MlpConfig = field(default_factory=MlpConfig)
    history: dict = field(default_factory=lambda: {"train_loss": [], "val_loss": []})

    @property
    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def forward(self, X: np.ndarray) -> np.ndarray:
        return softmax(selu(X @ self.W1 + self.b1) @ self.W2 + self.b2)

    def __call__(self, X) -> np.ndarray:
        return self.forward(np.asarray(X, dtype=np.float64))

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "target": self.target,
            "classes": list(self.classes),
            "shapes": {"W1": list(self.W1.shape), "W2": list(self.W2.shape)},
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.tolist(),
            "b2": self.b2.tolist(),
            "config": asdict(self.config),
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MlpModel":
        return cls(
            features=tuple(obj["features"]),
            target=obj["target"],
            classes=tuple(obj["classes"]),
            W1=np.array(obj["W1"], dtype=np.float64),
            b1=np.array(obj["b1"], dtype=np.float64),
            W2=np.array(obj["W2"], dtype=np.float64),
            b2=np.array(obj["b2"], dtype=np.float64),
            config=MlpConfig(**obj.get("config", {})),
            history=obj.get("history", {}),
        )

    def save(self, path: str | Path, header_comment: str | None = None) -> None:
        text = json.dumps(self.to_dict(), indent=1)
        if header_comment:
            text = f"# {header_comment}\n{text}"
        Path(path).write_text(text + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MlpModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        body = "\n".join(ln for ln in lines if not ln.startswith("#"))
        return cls.from_dict(json.loads(body))


def init_params(n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator):
    """Zero-mean normal weights with variance 1/fan_in, zero biases."""
    W1 = rng.normal(0.0, np.sqrt(1.0 / n_in), size=(n_in, n_hidden))
    W2 = rng.normal(0.0, np.sqrt(1.0 / n_hidden), size=(n_hidden, n_out))
    return W1, np.zeros(n_hidden), W2, np.zeros(n_out)


def loss_and_grads(params, X: np.ndarray, y: np.ndarray):
    """Mean softmax cross-entropy and its gradients w.r.t. (W1, b1, W2, b2)."""
    W1, b1, W2, b2 = params
    pre = X @ W1 + b1
    h = selu(pre)
    logits = h @ W2 + b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -log_probs[np.arange(n), y].mean()
    d_logits = np.exp(log_probs)
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    gW2 = h.T @ d_logits
    gb2 = d_logits.sum(axis=0)
    d_pre = (d_logits @ W2.T) * selu_grad(pre)
    gW1 = X.T @ d_pre
    gb1 = d_pre.sum(axis=0)
    return float(loss), [gW1, gb1, gW2, gb2]


def _xy(data: CodedDataset, features: Sequence[str], target: str, n_classes: int):
    X = data.values[:, [data.index(f) for f in features]].astype(np.float64)
    var = data.variable(target)
    y = data.column(target) - var.min_code
    if len(y) and (y.min() < 0 or y.max() >= n_classes):
        raise TrainingError(f"{target} has codes outside the class range")
    return X, y.astype(np.int64)


def _mean_loss(params, X, y) -> float:
    if len(y) == 0:
        return float("nan")
    return loss_and_grads(params, X, y)[0]


def train_mlp(
    train: CodedDataset,
    val: CodedDataset | None,
    config: MlpConfig | None = None,
    target: str = "mode",
    features: Sequence[str] | None = None,
) -> MlpModel:
    """Fit the classifier with mini-batch Adam and validation early stopping.

    Training stops after ``max_epochs`` or after ``patience`` epochs without
    a lower validation loss; the best-validation weights are restored.
    Without a validation set the final weights are kept.
    """
    config = config or MlpConfig()
    if train.n == 0:
        raise TrainingError("empty training set")
    features = tuple(features or [c for c in train.columns if c != target])
    var = train.variable(target)
    classes = tuple(label for _, label in sorted(var.levels))
    k = len(classes)
    X, y = _xy(train, features, target, k)
    absent = sorted(set(range(k)) - set(np.unique(y).tolist()))
    if absent:
        raise TrainingError(f"classes absent from training data: {[classes[i] for i in absent]}")
    Xv, yv = _xy(val, features, target, k) if val is not None and val.n else (None, None)

    rng = np.random.default_rng(config.seed)
    params = list(init_params(X.shape[1], config.hidden_units, k, rng))
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    history = {"train_loss": [], "val_loss": []}
    best = (np.inf, [p.copy() for p in params], 0)
    stale = 0
    n = len(y)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            _, grads = loss_and_grads(params, X[idx], y[idx])
            step += 1
            c1 = 1.0 - config.beta1 ** step
            c2 = 1.0 - config.beta2 ** step
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= config.beta1
                mi += (1.0 - config.beta1) * g
                vi *= config.beta2
                vi += (1.0 - config.beta2) * g * g
                p -= config.learning_rate * (mi / c1) / (np.sqrt(vi / c2) + config.eps)
        history["train_loss"].append(_mean_loss(params, X, y))
        if Xv is None:
            continue
        val_loss = _mean_loss(params, Xv, yv)
        history["val_loss"].append(val_loss)
        if val_loss < best[0]:
            best = (val_loss, [p.copy() for p in params], epoch)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if Xv is not None:
        params = best[1]
        history["best_epoch"] = best[2]
    W1, b1, W2, b2 = params
    return MlpModel(features, target, classes, W1, b1, W2, b2, config, history)


def predict(model: MlpModel, data: CodedDataset) -> np.ndarray:
    """Class-probability rows for each data row."""
    missing = [f for f in model.features if f not in data.columns]
    if missing:
        raise TrainingError(f"data lacks model features {missing}")
    X = data.values[:, [data.index(f) for f in model.features]].astype(np.float64)
    return model.forward(X)


def predict_classes(model: MlpModel, data: CodedDataset) -> np.ndarray:
    # argmax returns the first maximum, so ties go to the lowest class index
    return predict(model, data).argmax(axis=1)


def accuracy(predicted, actual) -> float:
    """Percentage of matching entries."""
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape:
        raise ValueError("predicted and actual differ in length")
    if predicted.size == 0:
        raise ValueError("cannot score empty vectors")
    return 100.0 * float((predicted == actual).sum()) / predicted.size


def class_report(predicted, actual, classes: Sequence[str]) -> list[tuple[str, float, float]]:
    """(class, precision, recall) per class; NaN where undefined."""
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    out = []
    for i, c in enumerate(classes):
        tp = float(((predicted == i) & (actual == i)).sum())
        pp = float((predicted == i).sum())
        ap = float((actual == i).sum())
        out.append((c, tp / pp if pp else float("nan"), tp / ap if ap else float("nan")))
    return out


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Fold id per row, classes dealt round-robin after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=np.int64)
    for value in np.unique(labels):
        rows = np.flatnonzero(labels == value)
        if len(rows) < k:
            raise DataError(f"class {value} has {len(rows)} rows; need at least {k} for {k}-fold CV")
        rows = rows[rng.permutation(len(rows))]
        folds[rows] = np.arange(len(rows)) % k
    return folds


def cross_validate(
    data: CodedDataset,
    k: int = 5,
    config: MlpConfig | None = None,
    target: str = "mode",
    smote_k: int = 5,
    use_smote: bool = True,
    val_fraction: float = 0.2,
) -> list[float]:
    """Stratified k-fold accuracies.

    Each fold's model sees the other folds, of which ``val_fraction`` is held
    back (stratified) for early stopping; SMOTE is applied to the rest.
    """
    config = config or MlpConfig()
    if k < 2:
        raise ValueError("k must be at least 2")
    labels = data.column(target)
    folds = stratified_folds(labels, k, config.seed)
    scores = []
    for f in range(k):
        fold_cfg = MlpConfig(**{**asdict(config), "seed": config.seed + 1000 * (f + 1)})
        train_all = data.take(np.flatnonzero(folds != f))
        test = data.take(np.flatnonzero(folds == f))
        if val_fraction > 0:
            train, val = stratified_split(
                train_all,
                SplitSpec((("train", 1 - val_fraction), ("val", val_fraction)), target, fold_cfg.seed),
            )
        else:
            train, val = train_all, None
        if use_smote:
            train = smote(train, target, smote_k, fold_cfg.seed)
        model = train_mlp(train, val, fold_cfg, target=target)
        actual = test.column(target) - test.variable(target).min_code
        scores.append(accuracy(predict_classes(model, test), actual))
    return scores
