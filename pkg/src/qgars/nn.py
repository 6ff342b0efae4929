"""Dense neural-network stack with reverse-mode gradients.

Shared substrate for the autoencoder, the reservoir surrogate and the
downstream classifiers. Everything is float64; gradient checks against
central finite differences demand it. A network owns its parameters;
``forward`` returns a cache that ``backward`` consumes, and ``Adam``
applies updates with decoupled weight decay.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ShapeError

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh")

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


@dataclass
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "identity"
    batch_norm: bool = False
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if not (0.0 <= self.dropout < 1.0):
            raise ShapeError(f"dropout must lie in [0, 1), got {self.dropout}")


class DenseLayer:
    """Linear map -> optional batch norm -> activation -> optional dropout."""

    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        self.spec = spec
        bound = np.sqrt(6.0 / spec.in_dim)  # Kaiming-style fan-in scaling
        self.weight = rng.uniform(-bound, bound, size=(spec.in_dim, spec.out_dim))
        self.bias = np.zeros(spec.out_dim)
        if spec.batch_norm:
            self.gamma = np.ones(spec.out_dim)
            self.beta = np.zeros(spec.out_dim)
            self.running_mean = np.zeros(spec.out_dim)
            self.running_var = np.ones(spec.out_dim)
        else:
            self.gamma = self.beta = None
            self.running_mean = self.running_var = None

    def param_arrays(self) -> list[np.ndarray]:
        out = [self.weight, self.bias]
        if self.spec.batch_norm:
            out += [self.gamma, self.beta]
        return out

    def parameter_count(self) -> int:
        n = self.weight.size + self.bias.size
        if self.spec.batch_norm:
            n += 2 * self.spec.out_dim
        return n


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "tanh":
        return np.tanh(z)
    raise ShapeError(f"unknown activation {name!r}")


def _activation_grad(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(pre)
    if name == "relu":
        return (pre > 0).astype(np.float64)
    if name == "sigmoid":
        return post * (1.0 - post)
    if name == "tanh":
        return 1.0 - post**2
    raise ShapeError(f"unknown activation {name!r}")


@dataclass
class _LayerCache:
    x: np.ndarray
    pre_act: np.ndarray
    post_act: np.ndarray
    mask: np.ndarray | None
    bn_xhat: np.ndarray | None = None
    bn_inv_std: np.ndarray | None = None
    bn_eval: bool = False


@dataclass
class ForwardCache:
    output: np.ndarray
    train: bool
    layers: list[_LayerCache] = field(default_factory=list)


class Network:
    """Ordered dense layers with explicit forward/backward passes."""

    def __init__(self, specs: list[LayerSpec], rng: np.random.Generator):
        for a, b in zip(specs, specs[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}"
                )
        self.layers = [DenseLayer(s, rng) for s in specs]

    @property
    def in_dim(self) -> int:
        return self.layers[0].spec.in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].spec.out_dim

    def parameter_count(self) -> int:
        return sum(layer.parameter_count() for layer in self.layers)

    def param_arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers:
            out += layer.param_arrays()
        return out

    def forward(
        self,
        batch: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> ForwardCache:
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"layer 0 expects input dim {self.in_dim}, got shape {x.shape}"
            )
        cache = ForwardCache(output=x, train=train)
        for i, layer in enumerate(self.layers):
            spec = layer.spec
            if x.shape[1] != spec.in_dim:
                raise ShapeError(f"layer {i} expects dim {spec.in_dim}, got {x.shape[1]}")
            lc = _LayerCache(x=x, pre_act=None, post_act=None, mask=None)
            z = x @ layer.weight + layer.bias
            if spec.batch_norm:
                if train:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    layer.running_mean[:] = BN_MOMENTUM * layer.running_mean + (1 - BN_MOMENTUM) * mu
                    layer.running_var[:] = BN_MOMENTUM * layer.running_var + (1 - BN_MOMENTUM) * var
                else:
                    mu = layer.running_mean
                    var = layer.running_var
                    lc.bn_eval = True
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                xhat = (z - mu) * inv_std
                lc.bn_inv_std = inv_std
                lc.bn_xhat = xhat
                z = layer.gamma * xhat + layer.beta
            lc.pre_act = z
            a = _activate(spec.activation, z)
            lc.post_act = a
            if spec.dropout > 0.0 and train:
                if rng is None:
                    raise ShapeError("dropout in train mode needs an rng")
                mask = rng.random(a.shape) >= spec.dropout
                lc.mask = mask
                a = a * mask / (1.0 - spec.dropout)
            cache.layers.append(lc)
            x = a
        cache.output = x
        return cache

    def backward(
        self, cache: ForwardCache | None, loss_grad: np.ndarray
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients (aligned with ``param_arrays``) and the input gradient."""
        if cache is None or not cache.layers:
            raise RuntimeError("backward called without a cached forward pass")
        if len(cache.layers) != len(self.layers):
            raise RuntimeError("forward cache does not match this network")
        g = np.asarray(loss_grad, dtype=np.float64)
        if g.shape != cache.output.shape:
            raise ShapeError(
                f"loss gradient shape {g.shape} does not match output {cache.output.shape}"
            )
        grads_per_layer: list[list[np.ndarray]] = []
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            spec = layer.spec
            lc = cache.layers[i]
            if lc.mask is not None:
                g = g * lc.mask / (1.0 - spec.dropout)
            g = g * _activation_grad(spec.activation, lc.pre_act, lc.post_act)
            layer_grads: list[np.ndarray]
            if spec.batch_norm:
                d_gamma = (g * lc.bn_xhat).sum(axis=0)
                d_beta = g.sum(axis=0)
                if lc.bn_eval:
                    g = g * layer.gamma * lc.bn_inv_std
                else:
                    n = g.shape[0]
                    dxhat = g * layer.gamma
                    g = (
                        lc.bn_inv_std
                        / n
                        * (
                            n * dxhat
                            - dxhat.sum(axis=0)
                            - lc.bn_xhat * (dxhat * lc.bn_xhat).sum(axis=0)
                        )
                    )
                d_w = lc.x.T @ g
                d_b = g.sum(axis=0)
                layer_grads = [d_w, d_b, d_gamma, d_beta]
            else:
                d_w = lc.x.T @ g
                d_b = g.sum(axis=0)
                layer_grads = [d_w, d_b]
            g = g @ layer.weight.T
            grads_per_layer.append(layer_grads)
        flat: list[np.ndarray] = []
        for layer_grads in reversed(grads_per_layer):
            flat += layer_grads
        return flat, g

    def copy(self) -> "Network":
        clone = object.__new__(Network)
        clone.layers = []
        for layer in self.layers:
            dup = object.__new__(DenseLayer)
            dup.spec = layer.spec
            dup.weight = layer.weight.copy()
            dup.bias = layer.bias.copy()
            if layer.spec.batch_norm:
                dup.gamma = layer.gamma.copy()
                dup.beta = layer.beta.copy()
                dup.running_mean = layer.running_mean.copy()
                dup.running_var = layer.running_var.copy()
            else:
                dup.gamma = dup.beta = None
                dup.running_mean = dup.running_var = None
            clone.layers.append(dup)
        return clone


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over the batch of the squared Euclidean distance."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = pred.shape[0]
    loss = float((diff**2).sum() / n)
    return loss, 2.0 * diff / n


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Softmax + NLL, mean over the batch; gradient is (softmax - onehot)/n."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"expected (n, 2) logits, got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    if labels.min() < 0 or labels.max() > 1:
        raise ShapeError("labels must be binary (0 or 1)")
    labels = labels.astype(np.intp)
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), labels].mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


class Adam:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(
        self,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ShapeError("parameter/gradient lists differ in length")
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(params, grads, self._m, self._v):
            if p.shape != g.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            if self.weight_decay != 0.0:
                p -= self.lr * self.weight_decay * p


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"QGNN"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sII")
_LAYER_HEADER = struct.Struct("<IIBBd")
_ACT_IDS = {name: i for i, name in enumerate(ACTIVATIONS)}


def save_network(path: str | Path, net: Network) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(net.layers)))
        for layer in net.layers:
            spec = layer.spec
            fh.write(
                _LAYER_HEADER.pack(
                    spec.in_dim,
                    spec.out_dim,
                    _ACT_IDS[spec.activation],
                    1 if spec.batch_norm else 0,
                    spec.dropout,
                )
            )
            fh.write(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
            if spec.batch_norm:
                for arr in (layer.gamma, layer.beta, layer.running_mean, layer.running_var):
                    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_network(path: str | Path) -> Network:
    def read_exact(fh, n: int) -> bytes:
        data = fh.read(n)
        if len(data) != n:
            raise DataFormatError(f"{path}: truncated checkpoint")
        return data

    with open(path, "rb") as fh:
        magic, version, n_layers = _CKPT_HEADER.unpack(read_exact(fh, _CKPT_HEADER.size))
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
        net = object.__new__(Network)
        net.layers = []
        for _ in range(n_layers):
            in_dim, out_dim, act_id, has_bn, dropout = _LAYER_HEADER.unpack(
                read_exact(fh, _LAYER_HEADER.size)
            )
            spec = LayerSpec(
                in_dim=in_dim,
                out_dim=out_dim,
                activation=ACTIVATIONS[act_id],
                batch_norm=bool(has_bn),
                dropout=dropout,
            )
            layer = object.__new__(DenseLayer)
            layer.spec = spec
            layer.weight = np.frombuffer(read_exact(fh, in_dim * out_dim * 8), dtype="<f8").reshape(
                in_dim, out_dim
            ).copy()
            layer.bias = np.frombuffer(read_exact(fh, out_dim * 8), dtype="<f8").copy()
            if spec.batch_norm:
                layer.gamma = np.frombuffer(read_exact(fh, out_dim * 8), dtype="<f8").copy()
                layer.beta = np.frombuffer(read_exact(fh, out_dim * 8), dtype="<f8").copy()
                layer.running_mean = np.frombuffer(read_exact(fh, out_dim * 8), dtype="<f8").copy()
                layer.running_var = np.frombuffer(read_exact(fh, out_dim * 8), dtype="<f8").copy()
            else:
                layer.gamma = layer.beta = None
                layer.running_mean = layer.running_var = None
            net.layers.append(layer)
    return net
