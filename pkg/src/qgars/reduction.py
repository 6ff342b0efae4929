"""Feature reduction: PCA, a plain autoencoder, and the guided autoencoder
trained through a differentiable surrogate of the quantum reservoir.

The guided loop optimizes ``(1 - lam) * L_R + lam * L_C`` where L_R is the
reconstruction loss and L_C is cross-entropy on a linear classifier fed by
the surrogate's predicted embeddings. The surrogate is refreshed against
the true reservoir every ``update_frequency`` epochs and stays frozen in
between; gradients flow through it into the encoder.

RNG discipline: autoencoder initialization, batch shuffling and dropout
draw from one stream; the surrogate, guided classifier and probe
subsampling draw from a second, independent stream. With lam = 0 the
guided path contributes exactly zero gradient and the encoder/decoder
trajectory is bit-identical to ``ae_train`` under the same seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import reservoir
from .data import Dataset
from .errors import ConfigError, TrainingError
from .nn import Adam, LayerSpec, Network, cross_entropy_loss, mse_loss

# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


@dataclass
class PCAModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray  # (k,), non-increasing


def pca_fit(data: np.ndarray, k: int) -> PCAModel:
    """Top-k principal directions of mean-centered data, via SVD."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"pca_fit expects a 2-D matrix, got shape {x.shape}")
    n, d = x.shape
    if not (1 <= k <= min(n, d)):
        raise ConfigError(f"k must satisfy 1 <= k <= min(n, d) = {min(n, d)}, got {k}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:k].copy()
    # fix the sign convention so fits are reproducible across BLAS builds
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    explained = s[:k] ** 2 / max(n - 1, 1)
    return PCAModel(mean=mean, components=components, explained_variance=explained)


def pca_transform(model: PCAModel, data: np.ndarray) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.mean.shape[0]:
        raise ConfigError(
            f"pca_transform expects (n, {model.mean.shape[0]}), got {x.shape}"
        )
    return (x - model.mean) @ model.components.T


def pca_inverse_transform(model: PCAModel, codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.float64)
    return codes @ model.components + model.mean


# ---------------------------------------------------------------------------
# autoencoder + guided training
# ---------------------------------------------------------------------------


@dataclass
class AutoencoderConfig:
    hidden: tuple[int, ...] = (256, 64)
    dropout: float = 0.1  # encoder only
    batch_norm: bool = True  # encoder hidden layers
    epochs: int = 40
    batch_size: int = 32
    lr: float = 2e-3
    weight_decay: float = 1e-5


@dataclass
class GuidedConfig:
    lam: float = 0.5
    update_frequency: int = 5
    surrogate_hidden: tuple[int, ...] = (256, 1024)
    surrogate_steps: int = 200
    surrogate_batch_size: int = 64
    surrogate_lr: float = 1e-3
    probe_size: int | None = None  # None = full training set
    n_workers: int = 1

    def __post_init__(self) -> None:
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        if self.update_frequency < 1:
            raise ConfigError(f"update_frequency must be >= 1, got {self.update_frequency}")


@dataclass
class GuidedTrainState:
    encoder: Network
    decoder: Network
    surrogate: Network | None
    classifier: Network | None
    lam: float
    update_frequency: int
    epoch: int
    loss_trace: dict[str, list[float]]
    reservoir_config: reservoir.ReservoirConfig | None = None
    query_log: list[dict] = field(default_factory=list)
    probe_latents: np.ndarray | None = None
    probe_embeddings: np.ndarray | None = None

    @property
    def refresh_count(self) -> int:
        return len(self.query_log)


def _encoder_specs(input_dim: int, latent_dim: int, cfg: AutoencoderConfig) -> list[LayerSpec]:
    dims = [input_dim, *cfg.hidden, latent_dim]
    specs = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        specs.append(
            LayerSpec(
                a,
                b,
                activation="identity" if last else "relu",
                batch_norm=cfg.batch_norm and not last,
                dropout=0.0 if last else cfg.dropout,
            )
        )
    return specs


def _decoder_specs(input_dim: int, latent_dim: int, cfg: AutoencoderConfig) -> list[LayerSpec]:
    dims = [latent_dim, *reversed(cfg.hidden), input_dim]
    specs = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        specs.append(LayerSpec(a, b, activation="sigmoid" if last else "relu"))
    return specs


def surrogate_specs(latent_dim: int, embedding_dim: int, hidden: tuple[int, ...]) -> list[LayerSpec]:
    dims = [latent_dim, *hidden, embedding_dim]
    return [
        LayerSpec(a, b, activation="identity" if i == len(dims) - 2 else "relu")
        for i, (a, b) in enumerate(zip(dims, dims[1:]))
    ]


def encode(encoder: Network, images: np.ndarray) -> np.ndarray:
    """Deterministic eval-mode pass through the encoder."""
    return encoder.forward(images, train=False).output


def surrogate_fit(
    latents: np.ndarray,
    embeddings: np.ndarray,
    hidden: tuple[int, ...] = (256, 1024),
    steps: int = 200,
    batch_size: int = 64,
    lr: float = 1e-3,
    rng: np.random.Generator | None = None,
    warm_start: Network | None = None,
    optimizer: Adam | None = None,
) -> tuple[Network, float, Adam]:
    """Fit (or refresh) the surrogate on (latent, embedding) pairs.

    Minimizes the mean squared embedding error for a fixed number of Adam
    steps; returns the network, its final full-data MSE and the optimizer
    (so refreshes can warm-start both).
    """
    z = np.asarray(latents, dtype=np.float64)
    q = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or q.ndim != 2 or z.shape[0] != q.shape[0]:
        raise ConfigError(f"latents {z.shape} and embeddings {q.shape} do not pair up")
    if z.shape[0] < 1:
        raise ConfigError("surrogate_fit needs at least one pair")
    if warm_start is not None:
        net = warm_start
        if net.in_dim != z.shape[1] or net.out_dim != q.shape[1]:
            raise ConfigError("warm-start surrogate does not match the pair dimensions")
    else:
        if rng is None:
            raise ConfigError("surrogate_fit needs an rng when initializing from scratch")
        net = Network(surrogate_specs(z.shape[1], q.shape[1], hidden), rng)
    opt = optimizer if optimizer is not None else Adam(lr=lr)
    n = z.shape[0]
    order = np.arange(n)
    cursor = n  # force an initial shuffle
    for _ in range(steps):
        if cursor + batch_size > n:
            if rng is not None:
                rng.shuffle(order)
            cursor = 0
        sel = order[cursor : cursor + batch_size]
        cursor += batch_size
        cache = net.forward(z[sel], train=True)
        _, grad = mse_loss(cache.output, q[sel])
        grads, _ = net.backward(cache, grad)
        opt.step(net.param_arrays(), grads)
    fit_mse, _ = mse_loss(net.forward(z, train=False).output, q)
    return net, fit_mse, opt


def _model_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0])


def _guided_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1])


def _check_finite(loss: float, epoch: int, what: str) -> None:
    if not np.isfinite(loss):
        raise TrainingError(f"{what} loss diverged to {loss} at epoch {epoch}")


def ae_train(
    dataset: Dataset,
    latent_dim: int,
    cfg: AutoencoderConfig,
    seed: int = 0,
) -> tuple[Network, Network, list[float]]:
    """Train a reconstruction-only autoencoder; returns per-epoch loss trace."""
    state = _train_autoencoder(dataset, latent_dim, cfg, seed, guided=None, reservoir_config=None)
    return state.encoder, state.decoder, state.loss_trace["reconstruction"]


def qgars_train(
    dataset: Dataset,
    reservoir_config: reservoir.ReservoirConfig,
    cfg: AutoencoderConfig,
    guided: GuidedConfig,
    seed: int = 0,
) -> GuidedTrainState:
    """Guided autoencoder training with periodic true-reservoir refreshes."""
    return _train_autoencoder(
        dataset, reservoir_config.n_atoms, cfg, seed, guided=guided, reservoir_config=reservoir_config
    )


def _train_autoencoder(
    dataset: Dataset,
    latent_dim: int,
    cfg: AutoencoderConfig,
    seed: int,
    guided: GuidedConfig | None,
    reservoir_config: reservoir.ReservoirConfig | None,
) -> GuidedTrainState:
    images = dataset.images
    labels = dataset.labels
    n, input_dim = images.shape
    if latent_dim < 1:
        raise ConfigError(f"latent_dim must be >= 1, got {latent_dim}")

    rng_model = _model_rng(seed)
    encoder = Network(_encoder_specs(input_dim, latent_dim, cfg), rng_model)
    decoder = Network(_decoder_specs(input_dim, latent_dim, cfg), rng_model)
    opt_enc = Adam(lr=cfg.lr, weight_decay=cfg.weight_decay)
    opt_dec = Adam(lr=cfg.lr, weight_decay=cfg.weight_decay)

    surrogate: Network | None = None
    classifier: Network | None = None
    opt_sur: Adam | None = None
    opt_clf: Adam | None = None
    rng_guided: np.random.Generator | None = None
    lam = 0.0
    if guided is not None:
        if reservoir_config is None:
            raise ConfigError("guided training needs a reservoir config")
        if reservoir_config.n_atoms != latent_dim:
            raise ConfigError(
                f"latent dim {latent_dim} must equal the number of atoms "
                f"({reservoir_config.n_atoms})"
            )
        lam = guided.lam
        rng_guided = _guided_rng(seed)
        emb_dim = reservoir.embedding_dimension(reservoir_config)
        surrogate = Network(
            surrogate_specs(latent_dim, emb_dim, guided.surrogate_hidden), rng_guided
        )
        classifier = Network([LayerSpec(emb_dim, 2)], rng_guided)
        opt_sur = Adam(lr=guided.surrogate_lr)
        opt_clf = Adam(lr=cfg.lr, weight_decay=cfg.weight_decay)

    state = GuidedTrainState(
        encoder=encoder,
        decoder=decoder,
        surrogate=surrogate,
        classifier=classifier,
        lam=lam,
        update_frequency=guided.update_frequency if guided else 0,
        epoch=0,
        loss_trace={"reconstruction": [], "classification": [], "surrogate": [], "total": []},
        reservoir_config=reservoir_config if guided is not None else None,
    )

    last_sur_mse = float("nan")
    for epoch in range(cfg.epochs):
        if guided is not None and epoch % guided.update_frequency == 0:
            last_sur_mse = _refresh_surrogate(state, images, guided, rng_guided, opt_sur, epoch)

        order = rng_model.permutation(n)
        sum_rec = 0.0
        sum_cls = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            x = images[sel]
            enc_cache = encoder.forward(x, train=True, rng=rng_model)
            z = enc_cache.output
            dec_cache = decoder.forward(z, train=True, rng=rng_model)
            loss_rec, grad_rec = mse_loss(dec_cache.output, x)
            _check_finite(loss_rec, epoch, "reconstruction")

            dec_grads, d_z_rec = decoder.backward(dec_cache, grad_rec)

            loss_cls = float("nan")
            d_z_total = d_z_rec if lam < 1.0 else np.zeros_like(d_z_rec)
            if lam < 1.0 and lam > 0.0:
                d_z_total = (1.0 - lam) * d_z_rec
            clf_grads = None
            if guided is not None:
                sur_cache = surrogate.forward(z, train=False)
                clf_cache = classifier.forward(sur_cache.output, train=True)
                loss_cls, grad_logits = cross_entropy_loss(clf_cache.output, labels[sel])
                _check_finite(loss_cls, epoch, "classification")
                clf_grads, d_q = classifier.backward(clf_cache, grad_logits)
                if lam > 0.0:
                    # frozen surrogate: only its input gradient is used
                    _, d_z_cls = surrogate.backward(sur_cache, d_q)
                    d_z_total = d_z_total + lam * d_z_cls

            enc_grads, _ = encoder.backward(enc_cache, d_z_total)
            opt_enc.step(encoder.param_arrays(), enc_grads)
            if lam < 1.0:
                scale = 1.0 - lam
                opt_dec.step(decoder.param_arrays(), [scale * g for g in dec_grads])
            if guided is not None and lam > 0.0:
                opt_clf.step(classifier.param_arrays(), [lam * g for g in clf_grads])

            sum_rec += loss_rec
            if guided is not None:
                sum_cls += loss_cls
            n_batches += 1

        state.loss_trace["reconstruction"].append(sum_rec / n_batches)
        cls_avg = (sum_cls / n_batches) if guided is not None else float("nan")
        state.loss_trace["classification"].append(cls_avg)
        state.loss_trace["surrogate"].append(last_sur_mse)
        total = (1.0 - lam) * (sum_rec / n_batches)
        if guided is not None:
            total += lam * cls_avg
        state.loss_trace["total"].append(total)
        state.epoch = epoch + 1
    return state


def _refresh_surrogate(
    state: GuidedTrainState,
    images: np.ndarray,
    guided: GuidedConfig,
    rng_guided: np.random.Generator,
    opt_sur: Adam,
    epoch: int,
) -> float:
    """Query the true reservoir with current latents and refit the surrogate.

    Only the freshest pairs are kept; older queries describe latents the
    encoder has already drifted away from.
    """
    reservoir_config = state.reservoir_config
    if guided.probe_size is not None and guided.probe_size < images.shape[0]:
        sel = rng_guided.choice(images.shape[0], size=guided.probe_size, replace=False)
        probe_images = images[sel]
    else:
        probe_images = images
    z = encode(state.encoder, probe_images)
    t0 = time.perf_counter()
    q = reservoir.embed_batch(z, reservoir_config, n_workers=guided.n_workers)
    wall = time.perf_counter() - t0
    state.query_log.append(
        {"epoch": epoch, "batch_size": int(z.shape[0]), "wall_time_s": wall}
    )
    state.probe_latents = z
    state.probe_embeddings = q
    net, fit_mse, _ = surrogate_fit(
        z,
        q,
        hidden=guided.surrogate_hidden,
        steps=guided.surrogate_steps,
        batch_size=guided.surrogate_batch_size,
        lr=guided.surrogate_lr,
        rng=rng_guided,
        warm_start=state.surrogate,
        optimizer=opt_sur,
    )
    state.surrogate = net
    return fit_mse
