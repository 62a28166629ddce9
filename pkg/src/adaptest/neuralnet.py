"""Feedforward neural score prediction.

One input node per question, configurable hidden layers with sigmoid/tanh
activations, a single identity output node predicting the test score.
Training is plain backpropagation (gradient descent with momentum) on mean
squared error. Question selection maximizes the variance of predicted scores
over a candidate's possible outcomes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .data import ResponseDataset


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}")


@dataclass(frozen=True)
class NetworkSpec:
    """Layer sizes; the output layer always has exactly one node."""

    input_size: int
    hidden_layers: tuple[int, ...] = ()
    activation: str = "sigmoid"
    output_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))
        if self.input_size < 1:
            raise ValueError("input_size must be >= 1")
        if self.output_size != 1:
            raise ValueError("the output layer has exactly one node")
        if self.activation not in ("sigmoid", "tanh"):
            raise ValueError(f"unsupported activation {self.activation!r}")
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError("hidden layer widths must be >= 1")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_size, *self.hidden_layers, 1)

    @classmethod
    def default_for(cls, input_size: int) -> "NetworkSpec":
        return cls(input_size=input_size, hidden_layers=(math.ceil(input_size / 2),))


@dataclass(frozen=True)
class NetworkWeights:
    """Per-layer weight matrices (out x in) and bias vectors.

    ``output_scale`` maps the unit-range training target back to score units.
    """

    matrices: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    output_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "matrices", tuple(np.asarray(m, dtype=float) for m in self.matrices))
        object.__setattr__(self, "biases", tuple(np.asarray(b, dtype=float) for b in self.biases))

    def check_shapes(self, spec: NetworkSpec) -> None:
        sizes = spec.layer_sizes
        if len(self.matrices) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("weight layer count does not match spec")
        for k, (w, b) in enumerate(zip(self.matrices, self.biases)):
            if w.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
                raise ValueError(f"layer {k}: shape {w.shape}/{b.shape} does not match spec")


@dataclass(frozen=True)
class AnswerEncoding:
    """How raw grades become input activations.

    scheme: zero_one (1 correct / 0 incorrect), neg_one (incorrect activates
    as -1), or points (the grade value itself). missing_policy: zero_fill, or
    item_mean using the per-item average encoded answer from training data.
    """

    scheme: str = "zero_one"
    missing_policy: str = "zero_fill"
    item_means: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.scheme not in ("zero_one", "neg_one", "points"):
            raise ValueError(f"unknown answer scheme {self.scheme!r}")
        if self.missing_policy not in ("zero_fill", "item_mean"):
            raise ValueError(f"unknown missing policy {self.missing_policy!r}")
        if self.item_means is not None:
            object.__setattr__(self, "item_means", tuple(float(m) for m in self.item_means))

    def encode_value(self, grade: float) -> float:
        if self.scheme == "neg_one":
            return -1.0 if grade == 0 else float(grade)
        return float(grade)


def encode_answers(encoding: AnswerEncoding, answers: Sequence[Optional[float]]) -> np.ndarray:
    """Answer vector (missing entries None) -> input activations."""
    out = np.empty(len(answers))
    for i, grade in enumerate(answers):
        if grade is None:
            if encoding.missing_policy == "item_mean":
                if encoding.item_means is None:
                    raise ValueError("item_mean policy requires fitted item means")
                out[i] = encoding.item_means[i]
            else:
                out[i] = 0.0
        else:
            out[i] = encoding.encode_value(grade)
    return out


def fit_item_means(encoding: AnswerEncoding, rows: Sequence[Sequence[Optional[float]]]) -> AnswerEncoding:
    """Fill ``item_means`` with the per-item mean encoded answer (0 if never observed)."""
    n = len(rows[0])
    means = []
    for i in range(n):
        observed = [encoding.encode_value(r[i]) for r in rows if r[i] is not None]
        means.append(float(np.mean(observed)) if observed else 0.0)
    return replace(encoding, item_means=tuple(means))


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    return 1.0 / (1.0 + np.exp(-z))


def _activate_prime(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


def init_weights(spec: NetworkSpec, seed: int = 0) -> NetworkWeights:
    """Uniform(+-1/sqrt(fan_in)) initialization, reproducible per seed."""
    rng = np.random.default_rng(seed)
    sizes = spec.layer_sizes
    matrices, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        matrices.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return NetworkWeights(matrices=tuple(matrices), biases=tuple(biases))


def _forward_batch(weights: NetworkWeights, spec: NetworkSpec, x: np.ndarray) -> np.ndarray:
    a = x
    last = len(weights.matrices) - 1
    for k, (w, b) in enumerate(zip(weights.matrices, weights.biases)):
        z = a @ w.T + b
        a = z if k == last else _activate(z, spec.activation)  # identity output
    return a[:, 0]


def forward(
    weights: NetworkWeights,
    spec: NetworkSpec,
    encoding: AnswerEncoding,
    answers: Sequence[Optional[float]],
) -> float:
    """Predicted score for one (possibly partial) answer vector."""
    if len(answers) != spec.input_size:
        raise ValueError(f"expected {spec.input_size} answers, got {len(answers)}")
    weights.check_shapes(spec)
    x = encode_answers(encoding, answers)[None, :]
    return float(_forward_batch(weights, spec, x)[0]) * weights.output_scale


def loss_and_gradients(
    weights: NetworkWeights, spec: NetworkSpec, x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean squared error over the batch and its analytic gradients."""
    activations = [x]
    last = len(weights.matrices) - 1
    for k, (w, b) in enumerate(zip(weights.matrices, weights.biases)):
        z = activations[-1] @ w.T + b
        activations.append(z if k == last else _activate(z, spec.activation))
    pred = activations[-1][:, 0]
    n = x.shape[0]
    err = pred - y
    loss = float(np.mean(err**2))

    delta = (2.0 / n) * err[:, None]  # identity output layer
    grads_w: list[np.ndarray] = [None] * len(weights.matrices)
    grads_b: list[np.ndarray] = [None] * len(weights.matrices)
    for k in range(last, -1, -1):
        grads_w[k] = delta.T @ activations[k]
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ weights.matrices[k]) * _activate_prime(activations[k], spec.activation)
    return loss, grads_w, grads_b


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 0.5
    momentum: float = 0.9
    batch_size: Optional[int] = None  # None = full batch
    seed: int = 0
    val_fraction: float = 0.1
    normalize_targets: bool = True


@dataclass
class TrainResult:
    weights: NetworkWeights
    encoding: AnswerEncoding
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int


def train_backprop(
    spec: NetworkSpec,
    encoding: AnswerEncoding,
    rows: Sequence[Sequence[Optional[float]]],
    targets: Sequence[float],
    config: Optional[TrainConfig] = None,
) -> TrainResult:
    """Supervised backpropagation on (answer rows, score targets).

    Returns the weights at the best validation loss (training loss when the
    held-out split is empty); loss traces are in original score units.
    """
    config = config or TrainConfig()
    if not rows:
        raise ValueError("empty training data")
    if len(rows) != len(targets):
        raise ValueError("rows and targets must be aligned")
    if encoding.missing_policy == "item_mean" and encoding.item_means is None:
        encoding = fit_item_means(encoding, rows)
    x = np.stack([encode_answers(encoding, r) for r in rows])
    y = np.asarray(targets, dtype=float)

    scale = float(np.max(np.abs(y))) if config.normalize_targets else 1.0
    scale = scale if scale > 0 else 1.0
    y_scaled = y / scale

    rng = np.random.default_rng(config.seed)
    n = len(rows)
    n_val = int(round(n * config.val_fraction))
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size == 0:
        train_idx, val_idx = perm, perm[:0]
    x_train, y_train = x[train_idx], y_scaled[train_idx]
    x_val, y_val = x[val_idx], y_scaled[val_idx]

    weights = init_weights(spec, seed=config.seed)
    vel_w = [np.zeros_like(w) for w in weights.matrices]
    vel_b = [np.zeros_like(b) for b in weights.biases]
    mats = [w.copy() for w in weights.matrices]
    biases = [b.copy() for b in weights.biases]

    def snapshot() -> NetworkWeights:
        return NetworkWeights(
            matrices=tuple(m.copy() for m in mats),
            biases=tuple(b.copy() for b in biases),
            output_scale=scale,
        )

    def val_mse() -> float:
        if x_val.shape[0] == 0:
            return math.nan
        w = NetworkWeights(tuple(mats), tuple(biases))
        pred = _forward_batch(w, spec, x_val)
        return float(np.mean((pred - y_val) ** 2))

    batch = config.batch_size or x_train.shape[0]
    train_trace: list[float] = []
    val_trace: list[float] = []
    best_val = math.inf
    best_epoch = 0
    best = snapshot()

    for epoch in range(config.epochs):
        order = rng.permutation(x_train.shape[0])
        epoch_loss = 0.0
        seen = 0
        for start in range(0, x_train.shape[0], batch):
            idx = order[start:start + batch]
            w = NetworkWeights(tuple(mats), tuple(biases))
            loss, gw, gb = loss_and_gradients(w, spec, x_train[idx], y_train[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch)
            epoch_loss += loss * idx.size
            seen += idx.size
            for k in range(len(mats)):
                vel_w[k] = config.momentum * vel_w[k] - config.learning_rate * gw[k]
                vel_b[k] = config.momentum * vel_b[k] - config.learning_rate * gb[k]
                mats[k] += vel_w[k]
                biases[k] += vel_b[k]
        train_trace.append(epoch_loss / seen * scale**2)
        v = val_mse()
        val_trace.append(v * scale**2 if not math.isnan(v) else math.nan)
        criterion = v if not math.isnan(v) else train_trace[-1] / scale**2
        if criterion < best_val:
            best_val = criterion
            best_epoch = epoch
            best = snapshot()

    return TrainResult(
        weights=best,
        encoding=encoding,
        train_loss=train_trace,
        val_loss=val_trace,
        best_epoch=best_epoch,
    )


def training_rows_from_dataset(dataset: ResponseDataset) -> tuple[list[list[Optional[int]]], list[int]]:
    """(answer rows, raw-score targets) straight from a response dataset."""
    rows = [list(rec.grades) for rec in dataset.students]
    return rows, dataset.raw_scores()


def empirical_answer_probs(dataset: ResponseDataset) -> dict[int, dict[int, float]]:
    """Per input slot: observed outcome frequencies (the default selection prior)."""
    probs: dict[int, dict[int, float]] = {}
    for i in range(dataset.n_items):
        observed = [rec.grades[i] for rec in dataset.students if rec.grades[i] is not None]
        if not observed:
            probs[i] = {0: 0.5, 1: 0.5}
            continue
        counts: dict[int, int] = {}
        for g in observed:
            counts[g] = counts.get(g, 0) + 1
        total = len(observed)
        probs[i] = {g: c / total for g, c in sorted(counts.items())}
    return probs


def predicted_score_variance(
    weights: NetworkWeights,
    spec: NetworkSpec,
    encoding: AnswerEncoding,
    evidence: Mapping[int, float],
    slot: int,
    outcome_probs: Mapping[int, float],
) -> float:
    """Variance of the predicted score over one candidate's outcomes.

    Var_i = sum_x P(X_ix) (SC|X_ix - mean)^2 with unanswered slots imputed
    per the encoding's missing policy and evidence fixed at true grades.
    """
    total_p = sum(outcome_probs.values())
    if abs(total_p - 1.0) > 1e-6:
        raise ValueError(f"outcome distribution sums to {total_p}, not 1")
    answers: list[Optional[float]] = [None] * spec.input_size
    for s, grade in evidence.items():
        answers[s] = grade
    predictions, probs = [], []
    for outcome, p in outcome_probs.items():
        answers[slot] = outcome
        predictions.append(forward(weights, spec, encoding, answers))
        probs.append(p)
    answers[slot] = None
    pred = np.asarray(predictions)
    prob = np.asarray(probs)
    mean = float(prob @ pred)
    return float(prob @ (pred - mean) ** 2)


def select_max_variance(
    weights: NetworkWeights,
    spec: NetworkSpec,
    encoding: AnswerEncoding,
    evidence: Mapping[int, float],
    candidates: Sequence[int],
    answer_probs: Mapping[int, Mapping[int, float]],
) -> int:
    """Candidate slot maximizing predicted-score variance; ties break to the
    earliest candidate."""
    if not candidates:
        raise ValueError("candidate set must be nonempty")
    for slot in candidates:
        if slot in evidence:
            raise ValueError(f"candidate slot {slot} is already answered")
    best_slot = candidates[0]
    best_var = -1.0
    for slot in candidates:
        var = predicted_score_variance(weights, spec, encoding, evidence, slot, answer_probs[slot])
        if var > best_var:
            best_slot, best_var = slot, var
    return best_slot


def model_to_payload(
    spec: NetworkSpec,
    weights: NetworkWeights,
    encoding: AnswerEncoding,
    item_ids: Sequence[str],
    answer_probs: Optional[Mapping[int, Mapping[int, float]]] = None,
    training_meta: Optional[Mapping] = None,
) -> dict:
    doc = {
        "spec": {
            "input_size": spec.input_size,
            "hidden_layers": list(spec.hidden_layers),
            "activation": spec.activation,
        },
        "encoding": {
            "scheme": encoding.scheme,
            "missing_policy": encoding.missing_policy,
            "item_means": list(encoding.item_means) if encoding.item_means else None,
        },
        "weights": {
            "matrices": [m.tolist() for m in weights.matrices],
            "biases": [b.tolist() for b in weights.biases],
            "output_scale": weights.output_scale,
        },
        "item_ids": list(item_ids),
    }
    if answer_probs is not None:
        doc["answer_probs"] = {
            str(slot): {str(outcome): p for outcome, p in dist.items()}
            for slot, dist in answer_probs.items()
        }
    if training_meta:
        doc["training"] = dict(training_meta)
    return doc


def model_from_payload(payload: Mapping):
    spec = NetworkSpec(
        input_size=int(payload["spec"]["input_size"]),
        hidden_layers=tuple(payload["spec"]["hidden_layers"]),
        activation=payload["spec"].get("activation", "sigmoid"),
    )
    enc = payload["encoding"]
    encoding = AnswerEncoding(
        scheme=enc["scheme"],
        missing_policy=enc["missing_policy"],
        item_means=tuple(enc["item_means"]) if enc.get("item_means") else None,
    )
    w = payload["weights"]
    weights = NetworkWeights(
        matrices=tuple(np.asarray(m) for m in w["matrices"]),
        biases=tuple(np.asarray(b) for b in w["biases"]),
        output_scale=float(w.get("output_scale", 1.0)),
    )
    weights.check_shapes(spec)
    item_ids = tuple(payload["item_ids"])
    answer_probs = None
    if payload.get("answer_probs"):
        answer_probs = {
            int(slot): {int(outcome): float(p) for outcome, p in dist.items()}
            for slot, dist in payload["answer_probs"].items()
        }
    return spec, weights, encoding, item_ids, answer_probs
