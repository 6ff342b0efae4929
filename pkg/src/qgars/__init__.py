"""Quantum-guided autoencoders over a simulated Rydberg-chain reservoir.

Pipeline: reduce image data to a latent code (PCA, autoencoder, or the
surrogate-guided autoencoder), encode the code as local detunings of a
driven neutral-atom chain, evolve and read out multi-qubit Z correlations
as embeddings, and classify those embeddings.
"""

from .classify import ClassifierConfig, EvalReport, aggregate_seeds, evaluate, linear_train, mlp_train
from .config import DatasetSpec, ExperimentConfig, load_config, profile_config, save_config
from .data import Dataset, generate_synthetic_polyps, load_image_patches, load_mnist_idx, split_train_test
from .nn import Adam, LayerSpec, Network, cross_entropy_loss, load_network, mse_loss, save_network
from .pipeline import export_embeddings, run_experiment, run_sweep
from .reduction import (
    AutoencoderConfig,
    GuidedConfig,
    GuidedTrainState,
    PCAModel,
    ae_train,
    encode,
    pca_fit,
    pca_inverse_transform,
    pca_transform,
    qgars_train,
    surrogate_fit,
)
from .reservoir import (
    ReservoirConfig,
    build_hamiltonian,
    count_observables,
    embed,
    embed_batch,
    embedding_dimension,
    evolve,
    map_latent_to_detuning,
    measure_observables,
)

__version__ = "0.1.0"
