"""Reference classifiers, macro-averaged metrics and the train-set comparison protocol."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .dataset import LabeledDataset, concat
from .errors import ConfigError, DataError

KINDS = ("softmax_linear", "mlp_one_hidden")


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str = "mlp_one_hidden"
    hidden_units: int = 32
    learning_rate: float = 0.05
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"classifier kind must be one of {KINDS}")
        if self.hidden_units < 1:
            raise ConfigError("hidden_units must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")


def init_params(kind: str, n_features: int, n_classes: int, hidden_units: int,
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Weights uniform in (-0.1, 0.1), biases zero."""
    if kind == "softmax_linear":
        return {
            "W": rng.uniform(-0.1, 0.1, (n_features, n_classes)),
            "b": np.zeros(n_classes),
        }
    return {
        "W1": rng.uniform(-0.1, 0.1, (n_features, hidden_units)),
        "b1": np.zeros(hidden_units),
        "W2": rng.uniform(-0.1, 0.1, (hidden_units, n_classes)),
        "b2": np.zeros(n_classes),
    }


def forward(params: dict[str, np.ndarray], X: np.ndarray) -> np.ndarray:
    """Class scores (logits) for every row of ``X``."""
    if "W" in params:
        return X @ params["W"] + params["b"]
    hidden = np.maximum(X @ params["W1"] + params["b1"], 0.0)
    return hidden @ params["W2"] + params["b2"]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(params: dict[str, np.ndarray], X: np.ndarray,
                  y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy and its gradient with respect to every parameter."""
    n = X.shape[0]
    if "W" in params:
        logits = X @ params["W"] + params["b"]
    else:
        pre = X @ params["W1"] + params["b1"]
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ params["W2"] + params["b2"]
    probs = _softmax(logits)
    loss = -np.mean(np.log(np.clip(probs[np.arange(n), y], 1e-300, None)))
    d_logits = probs.copy()
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    if "W" in params:
        return float(loss), {"W": X.T @ d_logits, "b": d_logits.sum(axis=0)}
    d_hidden = (d_logits @ params["W2"].T) * (pre > 0)
    return float(loss), {
        "W1": X.T @ d_hidden,
        "b1": d_hidden.sum(axis=0),
        "W2": hidden.T @ d_logits,
        "b2": d_logits.sum(axis=0),
    }


@dataclass
class Classifier:
    """Fitted classifier; features are standardised with training statistics."""

    spec: ClassifierSpec
    params: dict[str, np.ndarray]
    mean: np.ndarray
    scale: np.ndarray
    n_classes: int

    def standardise(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.mean.size:
            raise DataError(f"expected {self.mean.size} features, got shape {X.shape}")
        return forward(self.params, self.standardise(X))


def train_classifier(train: LabeledDataset, spec: ClassifierSpec = ClassifierSpec()) -> Classifier:
    """Full-batch gradient descent on the mean cross-entropy for a fixed number of epochs."""
    if len(train) == 0:
        raise DataError("cannot train on an empty dataset")
    if np.unique(train.labels).size < 2:
        raise DataError("training data must contain at least two classes")
    X = train.features
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Xs = (X - mean) / scale
    rng = np.random.default_rng(spec.seed)
    params = init_params(spec.kind, X.shape[1], train.n_classes, spec.hidden_units, rng)
    for _ in range(spec.epochs):
        _, grads = loss_and_grad(params, Xs, train.labels)
        for name, g in grads.items():
            params[name] -= spec.learning_rate * g
    return Classifier(spec, params, mean, scale, train.n_classes)


def predict_labels(classifier: Classifier, data) -> np.ndarray:
    """Arg-max class per row; ties go to the lowest class id."""
    X = data.features if isinstance(data, LabeledDataset) else data
    return np.argmax(classifier.decision_function(X), axis=1)


# ----- metrics ----- #

@dataclass
class EvalReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray

    @property
    def macro_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    def to_dict(self) -> dict:
        return {
            "precision": self.macro_precision,
            "recall": self.macro_recall,
            "f1": self.macro_f1,
            "per_class": [
                {"class": c, "precision": float(p), "recall": float(r), "f1": float(f)}
                for c, (p, r, f) in enumerate(zip(self.precision, self.recall, self.f1))
            ],
        }


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def macro_metrics(predicted, truth, n_classes: int) -> EvalReport:
    """One-vs-rest precision, recall and F1 per class; 0/0 is taken as 0."""
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape:
        raise DataError(f"{predicted.size} predictions for {truth.size} labels")
    if predicted.size and (max(predicted.max(), truth.max()) >= n_classes or min(predicted.min(), truth.min()) < 0):
        raise DataError(f"labels must lie in 0..{n_classes - 1}")
    tp = np.bincount(truth[predicted == truth], minlength=n_classes).astype(np.float64)
    pred_counts = np.bincount(predicted, minlength=n_classes)
    true_counts = np.bincount(truth, minlength=n_classes)
    precision = _safe_ratio(tp, pred_counts)
    recall = _safe_ratio(tp, true_counts)
    f1 = _safe_ratio(2 * precision * recall, precision + recall)
    return EvalReport(precision, recall, f1)


# ----- comparison protocol ----- #

TRAIN_SETS = ("train_orig", "train_syn", "train_ext")


@dataclass
class ComparisonReport:
    config: dict
    reports: dict[str, list[EvalReport]] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)

    def summary(self) -> dict:
        out = {}
        for name in TRAIN_SETS:
            if name not in self.reports:
                out[name] = None
                continue
            runs = self.reports[name]
            f1 = np.array([r.macro_f1 for r in runs])
            prec = np.array([r.macro_precision for r in runs])
            rec = np.array([r.macro_recall for r in runs])
            pc_p = np.array([r.precision for r in runs])
            pc_r = np.array([r.recall for r in runs])
            pc_f = np.array([r.f1 for r in runs])
            out[name] = {
                "f1_mean": float(f1.mean()),
                "f1_std": float(f1.std()),
                "precision_mean": float(prec.mean()),
                "precision_std": float(prec.std()),
                "recall_mean": float(rec.mean()),
                "recall_std": float(rec.std()),
                "per_class": [
                    {
                        "class": c,
                        "precision_mean": float(pc_p[:, c].mean()),
                        "recall_mean": float(pc_r[:, c].mean()),
                        "f1_mean": float(pc_f[:, c].mean()),
                        "f1_std": float(pc_f[:, c].std()),
                    }
                    for c in range(pc_f.shape[1])
                ],
            }
        return out

    def to_dict(self) -> dict:
        runs = []
        for name in TRAIN_SETS:
            for r, rep in enumerate(self.reports.get(name, [])):
                runs.append({"train_set": name, "repeat": r, "seed": self.config["seed"] + r, **rep.to_dict()})
        out = {"config": self.config, "runs": runs, "summary": self.summary()}
        if self.skipped:
            out["skipped"] = dict(self.skipped)
        return out


def _row_keys(X: np.ndarray) -> set[bytes]:
    return {row.tobytes() for row in np.ascontiguousarray(X, dtype=np.float64)}


def run_comparison(orig: LabeledDataset, syn: LabeledDataset, test: LabeledDataset,
                   spec: ClassifierSpec = ClassifierSpec(), repeats: int = 5,
                   workers: Optional[int] = None) -> ComparisonReport:
    """Train on the original, synthetic and combined sets and score each on ``test``.

    Run ``r`` of every configuration uses classifier seed ``spec.seed + r``.
    A synthetic set with fewer than two classes cannot train a classifier on
    its own; that configuration is then listed under ``skipped``.
    """
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    if len(orig) == 0 or len(test) == 0:
        raise DataError("original and test sets must be non-empty")
    n_classes = max(orig.n_classes, syn.n_classes, test.n_classes)
    test_keys = _row_keys(test.features)
    for name, data in (("original", orig), ("synthetic", syn)):
        if len(data) and not test_keys.isdisjoint(_row_keys(data.features)):
            raise DataError(f"test set shares identical rows with the {name} training set")

    def widen(d: LabeledDataset) -> LabeledDataset:
        return LabeledDataset(d.features.reshape(len(d), -1) if len(d) else np.empty((0, orig.n_features)),
                              d.labels, None, n_classes)

    sets = {"train_orig": widen(orig), "train_syn": widen(syn), "train_ext": concat(widen(orig), widen(syn))}
    report = ComparisonReport(config={**asdict(spec), "repeats": repeats, "n_test": len(test)})
    jobs = []
    for name in TRAIN_SETS:
        if np.unique(sets[name].labels).size < 2:
            report.skipped[name] = "fewer than two classes"
            continue
        jobs.extend((name, r) for r in range(repeats))

    def run(job):
        name, r = job
        clf = train_classifier(sets[name], ClassifierSpec(spec.kind, spec.hidden_units, spec.learning_rate,
                                                          spec.epochs, spec.seed + r))
        return macro_metrics(predict_labels(clf, test), test.labels, n_classes)

    if workers is None or workers == 1:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    for (name, _), rep in zip(jobs, results):
        report.reports.setdefault(name, []).append(rep)
    return report
