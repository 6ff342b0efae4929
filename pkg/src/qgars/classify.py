"""Final classifiers over embeddings or reduced features, plus multi-seed
accuracy aggregation and table rendering."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError
from .nn import Adam, LayerSpec, Network, cross_entropy_loss


@dataclass
class ClassifierConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 2e-3
    weight_decay: float = 1e-5


@dataclass
class Standardizer:
    """Per-feature zero-mean/unit-variance transform fit on the train split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        x = np.asarray(features, dtype=np.float64)
        std = x.std(axis=0)
        return cls(mean=x.mean(axis=0), std=np.where(std < 1e-12, 1.0, std))

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std


def _train_network(
    specs: list[LayerSpec],
    features: np.ndarray,
    labels: np.ndarray,
    cfg: ClassifierConfig,
    seed: int,
) -> Network:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ConfigError(f"features {x.shape} and labels {y.shape} do not pair up")
    if not np.isin(y, (0, 1)).all():
        raise ConfigError("labels must be binary")
    rng = np.random.default_rng([seed, 2])
    net = Network(specs, rng)
    opt = Adam(lr=cfg.lr, weight_decay=cfg.weight_decay)
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            cache = net.forward(x[sel], train=True, rng=rng)
            loss, grad = cross_entropy_loss(cache.output, y[sel])
            if not np.isfinite(loss):
                raise TrainingError(f"classifier loss diverged at epoch {epoch}")
            grads, _ = net.backward(cache, grad)
            opt.step(net.param_arrays(), grads)
    return net


def linear_train(
    features: np.ndarray, labels: np.ndarray, cfg: ClassifierConfig, seed: int = 0
) -> Network:
    """Single dense layer (in -> 2), cross-entropy + Adam; 2*in + 2 params."""
    in_dim = np.asarray(features).shape[1]
    return _train_network([LayerSpec(in_dim, 2)], features, labels, cfg, seed)


def mlp_train(
    features: np.ndarray, labels: np.ndarray, cfg: ClassifierConfig, seed: int = 0
) -> Network:
    """4-layer net with two 100-neuron relu hidden layers."""
    in_dim = np.asarray(features).shape[1]
    specs = [
        LayerSpec(in_dim, 100, "relu"),
        LayerSpec(100, 100, "relu"),
        LayerSpec(100, 2),
    ]
    return _train_network(specs, features, labels, cfg, seed)


def evaluate(net: Network, features: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy in percent: argmax predictions against binary labels."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if y.shape != (x.shape[0],):
        raise ConfigError(f"features {x.shape} and labels {y.shape} do not pair up")
    pred = net.forward(x, train=False).output.argmax(axis=1)
    return float((pred == y).mean() * 100.0)


@dataclass
class EvalReport:
    method: str
    accuracies: list[float]  # per-seed, percent
    mean: float
    std: float  # sample (n-1) estimator
    n_train: int
    n_test: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "accuracies": self.accuracies,
            "mean": self.mean,
            "std": self.std,
            "max": max(self.accuracies),
            "n_train": self.n_train,
            "n_test": self.n_test,
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def aggregate_seeds(
    accuracies: list[float], method: str = "", n_train: int = 0, n_test: int = 0
) -> EvalReport:
    """Mean and sample standard deviation over per-seed accuracies."""
    if len(accuracies) < 2:
        raise ConfigError("aggregate_seeds needs at least 2 seeds for a std estimate")
    accs = [float(a) for a in accuracies]
    mean = sum(accs) / len(accs)
    std = math.sqrt(sum((a - mean) ** 2 for a in accs) / (len(accs) - 1))
    return EvalReport(
        method=method, accuracies=accs, mean=mean, std=std, n_train=n_train, n_test=n_test
    )


def render_table(reports: list[EvalReport]) -> tuple[str, str]:
    """Comparison table (method vs accuracy) as CSV text and aligned text."""
    csv_buf = io.StringIO()
    csv_buf.write("method,mean,std,max,seeds\n")
    for r in reports:
        csv_buf.write(f"{r.method},{r.mean:.2f},{r.std:.2f},{max(r.accuracies):.2f},{len(r.accuracies)}\n")
    width = max([len("Method")] + [len(r.method) for r in reports]) + 2
    lines = [f"{'Method':<{width}}Accuracy (%)"]
    for r in reports:
        lines.append(f"{r.method:<{width}}{r.mean:.2f} +/- {r.std:.2f}")
    return csv_buf.getvalue(), "\n".join(lines) + "\n"
