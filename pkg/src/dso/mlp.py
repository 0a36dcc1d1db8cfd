"""Feature-to-parameter regression with a small fully connected network.

The network maps the fused 134-wide feature vector (8 DCGM ratios followed
by the 126 PTX fractions) to the seven model parameters.  Hidden layers use
the logistic sigmoid, the output layer is linear, and targets are
standardized per dimension.  Training is plain mini-batch gradient descent
on ``0.5 * mean(||y - t||^2)``; hyperparameters come from a 3-fold
cross-validated grid search.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from dso.errors import DatasetTooSmall, SchemaMismatch
from dso.model import PARAM_NAMES, KernelModelParams
from dso.ptx_features import PtxFeatureVector
from dso.telemetry import DcgmMetricVector

FORMAT_VERSION = 1
N_FEATURES = 134
DEFAULT_HIDDEN = (100, 50, 25)
DEFAULT_GRID = tuple((lr, bs) for lr in (0.3, 0.1, 0.03, 0.01) for bs in (8, 16, 32))
N_FOLDS = 3
_DIVERGED = 1e12


@dataclass(frozen=True)
class FusedFeatures:
    dcgm: DcgmMetricVector
    ptx: PtxFeatureVector

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.dcgm.as_vector(), self.ptx.as_vector()])


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 16
    epochs: int = 1000
    seed: int = 0
    grid: tuple[tuple[float, int], ...] = DEFAULT_GRID
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    hidden_activation: str = "sigmoid"
    standardize: bool = True

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.batch_size > 0 and self.epochs > 0 and self.seed >= 0):
            raise ValueError("learning_rate, batch_size, epochs must be positive and seed >= 0")
        if any(not (lr > 0 and bs > 0) for lr, bs in self.grid):
            raise ValueError("grid entries must be positive")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class MlpModel:
    sizes: list[int]
    weights: list[np.ndarray]  # (fan_in, fan_out)
    biases: list[np.ndarray]
    target_mean: np.ndarray
    target_std: np.ndarray
    hidden_activation: str = "sigmoid"
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[k], self.sizes[k + 1]) or b.shape != (self.sizes[k + 1],):
                raise SchemaMismatch(f"layer {k} shapes do not chain with sizes {self.sizes}")
        if len(self.weights) != len(self.sizes) - 1:
            raise SchemaMismatch("one weight matrix per layer transition required")
        if np.any(self.target_std <= 0):
            raise SchemaMismatch("target std must be > 0")

    def _act(self, z):
        return _sigmoid(z) if self.hidden_activation == "sigmoid" else z

    def activations(self, X: np.ndarray) -> list[np.ndarray]:
        acts = [np.atleast_2d(X)]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            acts.append(z if k == last else self._act(z))
        return acts

    def forward_std(self, X: np.ndarray) -> np.ndarray:
        return self.activations(X)[-1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.forward_std(X) * self.target_std + self.target_mean

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "layer_sizes": list(self.sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": "identity",
            "seed": self.seed,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "target_mean": self.target_mean.tolist(),
            "target_std": self.target_std.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise SchemaMismatch(f"unsupported model format {d.get('format_version')}")
        try:
            return cls._from_fields(d)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise SchemaMismatch(f"malformed model document: {exc!r}") from None

    @classmethod
    def _from_fields(cls, d: dict) -> "MlpModel":
        return cls(
            sizes=list(d["layer_sizes"]),
            weights=[np.array(w, dtype=float).reshape(d["layer_sizes"][k], d["layer_sizes"][k + 1])
                     for k, w in enumerate(d["weights"])],
            biases=[np.array(b, dtype=float) for b in d["biases"]],
            target_mean=np.array(d["target_mean"], dtype=float),
            target_std=np.array(d["target_std"], dtype=float),
            hidden_activation=d.get("hidden_activation", "sigmoid"),
            seed=d.get("seed", 0),
            meta=d.get("meta", {}),
        )


def init_model(sizes, seed: int = 0, hidden_activation: str = "sigmoid",
               target_mean=None, target_std=None) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    n_out = sizes[-1]
    return MlpModel(
        sizes=list(sizes),
        weights=weights,
        biases=biases,
        target_mean=np.zeros(n_out) if target_mean is None else np.asarray(target_mean, float),
        target_std=np.ones(n_out) if target_std is None else np.asarray(target_std, float),
        hidden_activation=hidden_activation,
        seed=seed,
    )


def loss(model: MlpModel, X: np.ndarray, T: np.ndarray) -> float:
    """``0.5 * mean_over_samples(||y - t||^2)`` on standardized targets."""
    diff = model.forward_std(X) - T
    return 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))


def backprop(model: MlpModel, X: np.ndarray, T: np.ndarray):
    """Loss and per-layer ``(dW, db)`` for standardized targets ``T``."""
    acts = model.activations(X)
    n = acts[0].shape[0]
    diff = acts[-1] - T
    value = 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))
    delta = diff / n
    grads = [None] * len(model.weights)
    for k in range(len(model.weights) - 1, -1, -1):
        grads[k] = (acts[k].T @ delta, delta.sum(axis=0))
        if k:
            delta = delta @ model.weights[k].T
            if model.hidden_activation == "sigmoid":
                delta = delta * acts[k] * (1.0 - acts[k])
    return value, grads


def gradient_check(model: MlpModel, X: np.ndarray, T: np.ndarray,
                   epsilon: float = 1e-5, grads=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``grads`` overrides the analytic gradients (used to show that a
    corrupted gradient is caught).
    """
    if grads is None:
        _, grads = backprop(model, X, T)
    worst = 0.0
    for k in range(len(model.weights)):
        for param, analytic in ((model.weights[k], grads[k][0]), (model.biases[k], grads[k][1])):
            flat = param.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + epsilon
                up = loss(model, X, T)
                flat[idx] = orig - epsilon
                down = loss(model, X, T)
                flat[idx] = orig
                numeric = (up - down) / (2 * epsilon)
                a = analytic.reshape(-1)[idx]
                denom = max(abs(a), abs(numeric))
                if denom > 0:
                    worst = max(worst, abs(a - numeric) / max(denom, 1e-8))
    return worst


def lipschitz_bound(model: MlpModel) -> float:
    """Upper bound on max-norm output change per unit max-norm input change."""
    bound = float(np.max(model.target_std))
    slope = 0.25 if model.hidden_activation == "sigmoid" else 1.0
    for k, w in enumerate(model.weights):
        bound *= float(np.max(np.abs(w).sum(axis=0)))
        if k < len(model.weights) - 1:
            bound *= slope
    return bound


def _canonical_order(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    keys = np.hstack([X, Y])
    return np.lexsort(keys.T[::-1])


def _target_stats(Y: np.ndarray, standardize: bool):
    if not standardize:
        return np.zeros(Y.shape[1]), np.ones(Y.shape[1]), []
    mean = Y.mean(axis=0)
    std = Y.std(axis=0)
    degenerate = [PARAM_NAMES[i] if Y.shape[1] == 7 else str(i) for i in np.flatnonzero(std == 0)]
    # a zero-variance target is left unscaled (std 1) but keeps its mean
    std = np.where(std == 0, 1.0, std)
    return mean, std, degenerate


def fit_network(X, Y, learning_rate: float, batch_size: int, cfg: TrainConfig):
    """Train one network with fixed hyperparameters; returns (model, loss trace).

    The trace holds the full-data loss after every epoch.  Training stops
    early, with ``meta['diverged']`` set, once the loss is non-finite or
    exceeds 1e12.
    """
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    mean, std, degenerate = _target_stats(Y, cfg.standardize)
    T = (Y - mean) / std
    sizes = [X.shape[1], *cfg.hidden, Y.shape[1]]
    model = init_model(sizes, cfg.seed, cfg.hidden_activation, mean, std)
    rng = np.random.default_rng(cfg.seed + 1)
    n = X.shape[0]
    trace = []
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = perm[start:start + batch_size]
                _, grads = backprop(model, X[idx], T[idx])
                for k, (dw, db) in enumerate(grads):
                    model.weights[k] -= learning_rate * dw
                    model.biases[k] -= learning_rate * db
            value = loss(model, X, T)
            trace.append(value)
            if not math.isfinite(value) or value > _DIVERGED:
                diverged = True
                break
    model.meta = {
        "learning_rate": learning_rate,
        "batch_size": batch_size,
        "epochs": cfg.epochs,
        "final_loss": trace[-1] if math.isfinite(trace[-1]) else None,
        "diverged": diverged,
        "degenerate_targets": degenerate,
    }
    return model, trace


def param_mape(pred: np.ndarray, target: np.ndarray, floor: np.ndarray) -> float:
    """MAPE with per-dimension denominators floored (targets may be exactly 0)."""
    if not np.all(np.isfinite(pred)):
        return math.inf
    return float(np.mean(np.abs(pred - target) / np.maximum(np.abs(target), floor)))


@dataclass
class CvResult:
    best: tuple[float, int]
    table: list[dict]

    def to_dict(self) -> dict:
        """JSON-safe view; diverged scores (infinite) become ``None``."""
        finite = lambda v: v if math.isfinite(v) else None  # noqa: E731
        table = [
            {**row, "fold_mape": [finite(v) for v in row["fold_mape"]], "mean_mape": finite(row["mean_mape"])}
            for row in self.table
        ]
        return {"best": {"learning_rate": self.best[0], "batch_size": self.best[1]}, "table": table}


def _as_arrays(dataset):
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray):
        X, Y = dataset
    else:
        X = np.array([f.as_vector() if isinstance(f, FusedFeatures) else np.asarray(f, float)
                      for f, _ in dataset])
        Y = np.array([t.as_tuple() if isinstance(t, KernelModelParams) else np.asarray(t, float)
                      for _, t in dataset])
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise SchemaMismatch("features and targets must be finite")
    order = _canonical_order(X, Y)
    return X[order], Y[order]


def fold_indices(n: int, seed: int, n_folds: int = N_FOLDS) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, n_folds)]


def cross_validate(dataset, grid=DEFAULT_GRID, cfg: TrainConfig | None = None) -> CvResult:
    """Pick the (learning rate, batch size) cell with the lowest mean fold MAPE.

    Ties go to the smaller learning rate, then the smaller batch size.
    Diverged cells score infinity and are never selected while any cell
    converges.
    """
    cfg = cfg or TrainConfig()
    X, Y = _as_arrays(dataset)
    n = X.shape[0]
    if n < N_FOLDS:
        raise DatasetTooSmall(f"{n} samples cannot form {N_FOLDS} folds")
    folds = fold_indices(n, cfg.seed)
    floor = 0.01 * np.maximum(np.mean(np.abs(Y), axis=0), 1e-12)
    table = []
    for lr, bs in grid:
        scores = []
        for k, val in enumerate(folds):
            train = np.setdiff1d(np.arange(n), val)
            model, _ = fit_network(X[train], Y[train], lr, bs, cfg)
            scores.append(math.inf if model.meta["diverged"] else param_mape(model.predict(X[val]), Y[val], floor))
        table.append({
            "learning_rate": lr,
            "batch_size": bs,
            "fold_mape": scores,
            "mean_mape": float(np.mean(scores)),
        })
    best = min(table, key=lambda r: (r["mean_mape"], r["learning_rate"], r["batch_size"]))
    return CvResult((best["learning_rate"], best["batch_size"]), table)


def train(dataset, cfg: TrainConfig | None = None) -> MlpModel:
    """Select hyperparameters by 3-fold CV, then retrain on the full dataset.

    The dataset is put into a canonical order first, so the result does
    not depend on the order rows were supplied in.
    """
    cfg = cfg or TrainConfig()
    X, Y = _as_arrays(dataset)
    if X.shape[0] < N_FOLDS:
        raise DatasetTooSmall(f"{X.shape[0]} samples; need at least {N_FOLDS}")
    if len(cfg.grid) > 1:
        cv = cross_validate((X, Y), cfg.grid, cfg)
        lr, bs = cv.best
    else:
        lr, bs = cfg.grid[0] if cfg.grid else (cfg.learning_rate, cfg.batch_size)
        cv = CvResult((lr, bs), [])
    model, trace = fit_network(X, Y, lr, bs, cfg)
    model.meta["cv"] = cv.to_dict()
    return model


def forward(model: MlpModel, x: FusedFeatures | np.ndarray) -> tuple[KernelModelParams, bool]:
    """Predict kernel parameters; outputs are clamped into the valid range.

    Returns the parameters and whether any clamping was applied.
    """
    vec = x.as_vector() if isinstance(x, FusedFeatures) else np.asarray(x, float)
    raw = model.predict(vec)[0]
    clamped = np.maximum(raw, 0.0)
    hit = bool(np.any(raw < 0))
    a, b = PARAM_NAMES.index("alpha"), PARAM_NAMES.index("beta")
    if clamped[a] + clamped[b] == 0:
        clamped[b] = max(abs(model.target_mean[b]), 1.0) * 1e-9
        hit = True
    return KernelModelParams(*map(float, clamped)), hit


def read_jsonl_dataset(text: str) -> tuple[np.ndarray, np.ndarray]:
    X, Y = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"line {lineno}: {exc.msg}") from None
        if not isinstance(rec, dict) or len(rec.get("features", ())) != N_FEATURES or len(rec.get("targets", ())) != 7:
            raise SchemaMismatch(f"line {lineno}: need features[{N_FEATURES}] and targets[7]")
        X.append(rec["features"])
        Y.append(rec["targets"])
    if not X:
        raise DatasetTooSmall("empty dataset")
    return np.array(X, float), np.array(Y, float)


def write_jsonl_dataset(X: np.ndarray, Y: np.ndarray) -> str:
    return "".join(
        json.dumps({"features": [float(v) for v in x], "targets": [float(v) for v in y]}) + "\n"
        for x, y in zip(X, Y)
    )
