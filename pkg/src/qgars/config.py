"""Experiment configuration: a versioned JSON schema with named profiles.

A resolved config is echoed into every output directory so a run can be
reproduced from its artifacts alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .classify import ClassifierConfig
from .errors import ConfigError
from .reduction import AutoencoderConfig, GuidedConfig
from .reservoir import ReservoirConfig

SCHEMA_VERSION = 1

METHODS = ("pca", "ae", "qgars")
CLASSIFIERS = ("linear", "mlp", "both")
DATASET_KINDS = ("synthetic", "mnist", "patches", "cache")


@dataclass
class DatasetSpec:
    kind: str = "synthetic"
    n_train: int = 400
    n_test: int = 100
    # synthetic
    n_total: int = 500
    image_size: int = 32
    data_seed: int = 1234
    # mnist
    images_path: str | None = None
    labels_path: str | None = None
    # patches
    directory: str | None = None
    manifest: str | None = None
    # cache
    cache_prefix: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be >= 1")


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    method: str = "qgars"
    latent_dim: int = 8
    use_qrc: bool = True
    reservoir: ReservoirConfig = field(default_factory=lambda: ReservoirConfig(n_atoms=8, n_timesteps=8))
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    guided: GuidedConfig = field(default_factory=GuidedConfig)
    classifier: str = "linear"
    classifier_train: ClassifierConfig = field(default_factory=ClassifierConfig)
    standardize_features: bool = True
    standardize_pca_latents: bool = True
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "out/run"
    n_workers: int = 1
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported config schema version {self.schema_version}, "
                f"expected {SCHEMA_VERSION}"
            )
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if self.method == "qgars" and not self.use_qrc:
            raise ConfigError("qgars requires the quantum reservoir stage")
        if self.use_qrc and self.latent_dim != self.reservoir.n_atoms:
            raise ConfigError(
                f"latent_dim ({self.latent_dim}) must equal the number of atoms "
                f"({self.reservoir.n_atoms}) when the reservoir stage is enabled"
            )

    @property
    def method_label(self) -> str:
        tag = {"pca": "PCA", "ae": "AE", "qgars": "QGARS"}[self.method]
        return f"{tag} + QRC" if self.use_qrc else tag

    def to_dict(self) -> dict:
        raw = asdict(self)
        raw["reservoir"] = self.reservoir.to_dict()
        raw["autoencoder"]["hidden"] = list(self.autoencoder.hidden)
        raw["guided"]["surrogate_hidden"] = list(self.guided.surrogate_hidden)
        return raw

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        if "dataset" in raw:
            raw["dataset"] = DatasetSpec(**raw["dataset"])
        if "reservoir" in raw:
            raw["reservoir"] = ReservoirConfig.from_dict(raw["reservoir"])
        if "autoencoder" in raw:
            ae = dict(raw["autoencoder"])
            ae["hidden"] = tuple(ae.get("hidden", (256, 64)))
            raw["autoencoder"] = AutoencoderConfig(**ae)
        if "guided" in raw:
            g = dict(raw["guided"])
            g["surrogate_hidden"] = tuple(g.get("surrogate_hidden", (256, 1024)))
            raw["guided"] = GuidedConfig(**g)
        if "classifier_train" in raw:
            raw["classifier_train"] = ClassifierConfig(**raw["classifier_train"])
        return cls(**raw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def save_config(path: str | Path, config: ExperimentConfig) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(config.to_json() + "\n")


def profile_config(name: str, **overrides) -> ExperimentConfig:
    """Named presets: ``desk`` finishes on a laptop, ``paper`` mirrors the
    reported reservoir scale (12 qubits, T=16, 2000/400)."""
    if name == "desk":
        cfg = ExperimentConfig(
            dataset=DatasetSpec(kind="synthetic", n_total=500, n_train=400, n_test=100),
            latent_dim=8,
            reservoir=ReservoirConfig(n_atoms=8, n_timesteps=8),
            out_dir="out/desk",
        )
    elif name == "paper":
        cfg = ExperimentConfig(
            dataset=DatasetSpec(kind="synthetic", n_total=2400, n_train=2000, n_test=400),
            latent_dim=12,
            reservoir=ReservoirConfig(n_atoms=12, n_timesteps=16),
            out_dir="out/paper",
        )
    else:
        raise ConfigError(f"unknown profile {name!r} (expected desk or paper)")
    raw = cfg.to_dict()
    raw.update(overrides)
    return ExperimentConfig.from_dict(raw)
