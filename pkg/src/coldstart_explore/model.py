"""Discoverability classifier.

A logistic model scores P(item becomes discoverable | features, traffic bucket).
The traffic bucket enters as a one-hot block concatenated to the item features.
Training is plain full-batch gradient descent on mean cross-entropy; the
gradient is exposed separately so it can be checked against finite differences.

Predicted per-bucket curves are made non-decreasing with isotonic regression
before they are inverted into per-item traffic caps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import AllocationConfig, BucketSchema, ConfigError, DataError

# Probabilities are kept strictly inside (0, 1) so log-loss and downstream
# thresholding never see exact 0 or 1.
_P_FLOOR = 1e-12
_P_CEIL = 1.0 - 1e-12


def _sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True, eq=False)
class TrainingExample:
    """One observed exploration outcome: features, served-traffic bucket, binary label."""

    features: np.ndarray
    bucket: int
    label: int

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=float)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        if self.label not in (0, 1):
            raise DataError("label must be 0 or 1")
        if self.bucket < 0:
            raise DataError("bucket index must be non-negative")


@dataclass(frozen=True)
class TrainingMeta:
    epochs: int
    final_loss: float
    seed: int


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.05
    epochs: int = 1000
    seed: int = 0


@dataclass(frozen=True, eq=False)
class DiscoverabilityModel:
    """Trained logistic model over (item features | one-hot bucket)."""

    weights: np.ndarray
    bias: float
    schema: BucketSchema
    meta: TrainingMeta

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def feature_dim(self) -> int:
        return len(self.weights) - self.schema.n_buckets


def _design_matrix(
    examples: Sequence[TrainingExample], schema: BucketSchema
) -> tuple[np.ndarray, np.ndarray]:
    dims = {len(ex.features) for ex in examples}
    if len(dims) != 1:
        raise DataError(f"feature dimension mismatch across examples: {sorted(dims)}")
    feature_dim = dims.pop()
    n_buckets = schema.n_buckets
    X = np.zeros((len(examples), feature_dim + n_buckets))
    y = np.zeros(len(examples))
    for i, ex in enumerate(examples):
        if ex.bucket >= n_buckets:
            raise DataError(f"bucket {ex.bucket} out of range for {n_buckets} buckets")
        X[i, :feature_dim] = ex.features
        X[i, feature_dim + ex.bucket] = 1.0
        y[i] = ex.label
    return X, y


def _mean_log_loss(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float) -> float:
    z = X @ w + b
    # log(1 + e^z) - y*z, computed without overflow
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def train(
    examples: Sequence[TrainingExample],
    schema: BucketSchema,
    params: Hyperparams = Hyperparams(),
) -> DiscoverabilityModel:
    """Fit the logistic model by full-batch gradient descent.

    Deterministic given params.seed. Refuses degenerate inputs: an empty set,
    inconsistent feature dimensions, or a single-class label set (for which the
    cross-entropy minimizer pushes weights to infinity).
    """
    if len(examples) == 0:
        raise DataError("empty training set")
    X, y = _design_matrix(examples, schema)
    if y.min() == y.max():
        raise DataError("single-class training set")

    rng = np.random.default_rng(params.seed)
    w = rng.normal(0.0, 0.01, size=X.shape[1])
    b = 0.0
    n = len(y)
    first_loss = _mean_log_loss(X, y, w, b)
    for _ in range(params.epochs):
        residual = _sigmoid(X @ w + b) - y
        w -= params.learning_rate * (X.T @ residual) / n
        b -= params.learning_rate * float(residual.mean())
    final_loss = _mean_log_loss(X, y, w, b)
    if not np.isfinite(final_loss):
        raise DataError("training diverged: non-finite loss")
    if final_loss > first_loss:
        raise DataError(
            f"training loss increased ({first_loss:.6f} -> {final_loss:.6f}); "
            "lower the learning rate"
        )
    meta = TrainingMeta(epochs=params.epochs, final_loss=final_loss, seed=params.seed)
    return DiscoverabilityModel(weights=w, bias=b, schema=schema, meta=meta)


def _check_features(model: DiscoverabilityModel, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.shape != (model.feature_dim,):
        raise DataError(
            f"feature dimension mismatch: got {x.shape}, model expects "
            f"({model.feature_dim},)"
        )
    return x


def predict(model: DiscoverabilityModel, features: np.ndarray, bucket: int) -> float:
    """P(discoverable) for one item at one traffic bucket, strictly inside (0, 1)."""
    x = _check_features(model, features)
    if not 0 <= bucket < model.schema.n_buckets:
        raise DataError(f"invalid bucket index {bucket}")
    z = float(x @ model.weights[: model.feature_dim]) + float(
        model.weights[model.feature_dim + bucket]
    ) + model.bias
    return float(np.clip(_sigmoid(np.array(z)), _P_FLOOR, _P_CEIL))


def predict_curve(model: DiscoverabilityModel, features: np.ndarray) -> np.ndarray:
    """P(discoverable) at every bucket; entry k equals predict(model, features, k)."""
    x = _check_features(model, features)
    base = float(x @ model.weights[: model.feature_dim]) + model.bias
    logits = base + model.weights[model.feature_dim :]
    return np.clip(_sigmoid(logits), _P_FLOOR, _P_CEIL)


def gradient(
    model: DiscoverabilityModel, example: TrainingExample
) -> tuple[np.ndarray, float]:
    """Analytic gradient of the per-example cross-entropy loss.

    Returns (d_loss/d_weights, d_loss/d_bias). For a logistic model both are
    (p - y) times the input, with the bias input fixed at 1.
    """
    if len(example.features) != model.feature_dim:
        raise DataError("feature dimension mismatch")
    if example.bucket >= model.schema.n_buckets:
        raise DataError(f"invalid bucket index {example.bucket}")
    x_full = np.zeros_like(model.weights)
    x_full[: model.feature_dim] = example.features
    x_full[model.feature_dim + example.bucket] = 1.0
    p = float(_sigmoid(np.array(x_full @ model.weights + model.bias)))
    residual = p - example.label
    return residual * x_full, residual


def monotone_curve(curve: np.ndarray) -> np.ndarray:
    """Non-decreasing least-squares fit of a bucket curve (pool adjacent violators).

    Returns the input unchanged (as a copy) when it is already non-decreasing.
    Idempotent.
    """
    values = np.asarray(curve, dtype=float)
    if values.ndim != 1 or len(values) == 0:
        raise DataError("curve must be a non-empty vector")
    if np.any(values < 0.0) or np.any(values > 1.0):
        raise DataError("curve values must lie in [0, 1]")
    # blocks of (total, count); merge backwards while means decrease
    totals: list[float] = []
    counts: list[int] = []
    for v in values:
        totals.append(float(v))
        counts.append(1)
        while len(totals) > 1 and totals[-2] / counts[-2] > totals[-1] / counts[-1]:
            totals[-2] += totals[-1]
            counts[-2] += counts[-1]
            totals.pop()
            counts.pop()
    out = np.empty_like(values)
    pos = 0
    for total, count in zip(totals, counts):
        out[pos : pos + count] = total / count
        pos += count
    return out


def invert_cap(
    curve: np.ndarray,
    cf: float,
    config: AllocationConfig,
    schema: BucketSchema,
) -> int | None:
    """Smallest traffic at which the curve reaches confidence cf.

    Picks the first bucket whose probability is >= cf and returns its
    representative traffic clamped into [min_cap, max_cap]. Returns None when
    no bucket reaches cf (the confidence is not achievable for this item).

    The curve must already be non-decreasing; a violation is reported rather
    than repaired so callers cannot silently skip the isotonic step.
    """
    values = np.asarray(curve, dtype=float)
    if len(values) != schema.n_buckets:
        raise DataError("curve length must equal the bucket count")
    if not 0.0 < cf < 1.0:
        raise ConfigError("confidence level must lie strictly inside (0, 1)")
    if np.any(np.diff(values) < 0.0):
        raise DataError("curve is not non-decreasing; apply monotone_curve first")
    qualifying = np.nonzero(values >= cf)[0]
    if len(qualifying) == 0:
        return None
    rep = schema.representative[int(qualifying[0])]
    return int(min(max(rep, config.min_cap), config.max_cap))


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def model_to_dict(model: DiscoverabilityModel) -> dict:
    return {
        "weights": [float(v) for v in model.weights],
        "bias": float(model.bias),
        "schema": {
            "edges": list(model.schema.edges),
            "representative": list(model.schema.representative),
        },
        "training_meta": {
            "epochs": model.meta.epochs,
            "final_loss": model.meta.final_loss,
            "seed": model.meta.seed,
        },
    }


def model_from_dict(raw: dict) -> DiscoverabilityModel:
    try:
        schema = BucketSchema(
            edges=tuple(raw["schema"]["edges"]),
            representative=tuple(raw["schema"]["representative"]),
        )
        meta = TrainingMeta(
            epochs=int(raw["training_meta"]["epochs"]),
            final_loss=float(raw["training_meta"]["final_loss"]),
            seed=int(raw["training_meta"]["seed"]),
        )
        return DiscoverabilityModel(
            weights=np.asarray(raw["weights"], dtype=float),
            bias=float(raw["bias"]),
            schema=schema,
            meta=meta,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad model payload: {exc}") from exc


def save_model(model: DiscoverabilityModel, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_model(path: str | Path) -> DiscoverabilityModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_examples(examples: Sequence[TrainingExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "features": [float(v) for v in ex.features],
                        "bucket": ex.bucket,
                        "label": ex.label,
                    },
                    sort_keys=True,
                )
            )
            fh.write("\n")


def load_examples(path: str | Path) -> list[TrainingExample]:
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                examples.append(
                    TrainingExample(
                        features=np.asarray(row["features"], dtype=float),
                        bucket=int(row["bucket"]),
                        label=int(row["label"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad training example: {exc}") from exc
    return examples
