"""Experiment orchestration: the reduce -> embed -> classify pipeline,
parameter sweeps, and embedding export.

Every artifact that participates in reproducibility checks (report JSON,
embedding exports, loss traces) is a deterministic function of the config;
wall-clock telemetry lives in its own file.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classify, matio, reduction, reservoir
from .config import ExperimentConfig, save_config
from .data import Dataset, generate_synthetic_polyps, load_dataset, load_image_patches, load_mnist_idx, split_train_test
from .errors import ConfigError
from .nn import save_network


def load_full_dataset(config: ExperimentConfig) -> Dataset:
    spec = config.dataset
    if spec.kind == "synthetic":
        return generate_synthetic_polyps(spec.n_total, spec.image_size, spec.data_seed)
    if spec.kind == "mnist":
        if not spec.images_path or not spec.labels_path:
            raise ConfigError("mnist dataset needs images_path and labels_path")
        return load_mnist_idx(
            spec.images_path, spec.labels_path, max_n=spec.n_total if spec.n_total else None
        )
    if spec.kind == "patches":
        if not spec.directory or not spec.manifest:
            raise ConfigError("patches dataset needs directory and manifest")
        return load_image_patches(spec.directory, spec.manifest, spec.image_size)
    if spec.kind == "cache":
        if not spec.cache_prefix:
            raise ConfigError("cache dataset needs cache_prefix")
        return load_dataset(spec.cache_prefix)
    raise ConfigError(f"unhandled dataset kind {spec.kind!r}")


@dataclass
class SeedResult:
    accuracies: dict[str, float]  # classifier name -> percent
    training_queries: int
    inference_queries: int
    loss_trace: dict[str, list[float]] | None
    query_log: list[dict]


def _reduce_features(
    config: ExperimentConfig, train: Dataset, test: Dataset, seed: int, seed_dir: Path | None
) -> tuple[np.ndarray, np.ndarray, dict[str, list[float]] | None, list[dict], object]:
    """Fit the reduction stage; returns train/test latents plus artifacts."""
    if config.method == "pca":
        model = reduction.pca_fit(train.images, config.latent_dim)
        lat_tr = reduction.pca_transform(model, train.images)
        lat_te = reduction.pca_transform(model, test.images)
        if config.use_qrc and config.standardize_pca_latents:
            std = classify.Standardizer.fit(lat_tr)
            lat_tr, lat_te = std.apply(lat_tr), std.apply(lat_te)
        return lat_tr, lat_te, None, [], model
    if config.method == "ae":
        encoder, decoder, trace = reduction.ae_train(
            train, config.latent_dim, config.autoencoder, seed
        )
        if seed_dir is not None:
            save_network(seed_dir / "encoder.ckpt", encoder)
            save_network(seed_dir / "decoder.ckpt", decoder)
        traces = {
            "reconstruction": trace,
            "classification": [float("nan")] * len(trace),
            "surrogate": [float("nan")] * len(trace),
            "total": trace,
        }
        return (
            reduction.encode(encoder, train.images),
            reduction.encode(encoder, test.images),
            traces,
            [],
            encoder,
        )
    if config.method == "qgars":
        state = reduction.qgars_train(
            train, config.reservoir, config.autoencoder, config.guided, seed
        )
        if seed_dir is not None:
            save_network(seed_dir / "encoder.ckpt", state.encoder)
            save_network(seed_dir / "decoder.ckpt", state.decoder)
            save_network(seed_dir / "surrogate.ckpt", state.surrogate)
        return (
            reduction.encode(state.encoder, train.images),
            reduction.encode(state.encoder, test.images),
            state.loss_trace,
            state.query_log,
            state.encoder,
        )
    raise ConfigError(f"unhandled method {config.method!r}")


def _write_loss_trace(path: Path, traces: dict[str, list[float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "L_R", "L_C", "L_sur", "total"])
        for i in range(len(traces["reconstruction"])):
            writer.writerow(
                [
                    i,
                    repr(traces["reconstruction"][i]),
                    repr(traces["classification"][i]),
                    repr(traces["surrogate"][i]),
                    repr(traces["total"][i]),
                ]
            )


def _export_embeddings(
    seed_dir: Path, config: ExperimentConfig, tag: str, values: np.ndarray, labels: np.ndarray
) -> None:
    matio.save_matrix(seed_dir / f"embeddings_{tag}.bin", values)
    header = ["label"] + reservoir.embedding_labels(config.reservoir)
    matio.save_csv(seed_dir / f"embeddings_{tag}.csv", values, header, label_column=labels)


def run_seed(
    config: ExperimentConfig, full: Dataset, seed: int, seed_dir: Path | None = None
) -> SeedResult:
    """One fully isolated pipeline pass for a single seed."""
    if seed_dir is not None:
        seed_dir.mkdir(parents=True, exist_ok=True)
    train, test = split_train_test(full, config.dataset.n_train, config.dataset.n_test, seed)
    lat_tr, lat_te, traces, query_log, _ = _reduce_features(config, train, test, seed, seed_dir)

    inference_queries = 0
    if config.use_qrc:
        feats_tr = reservoir.embed_batch(lat_tr, config.reservoir, config.n_workers)
        feats_te = reservoir.embed_batch(lat_te, config.reservoir, config.n_workers)
        inference_queries = feats_tr.shape[0] + feats_te.shape[0]
        if seed_dir is not None:
            _export_embeddings(seed_dir, config, "train", feats_tr, train.labels)
            _export_embeddings(seed_dir, config, "test", feats_te, test.labels)
    else:
        feats_tr, feats_te = lat_tr, lat_te

    if config.standardize_features:
        std = classify.Standardizer.fit(feats_tr)
        feats_tr, feats_te = std.apply(feats_tr), std.apply(feats_te)

    names = ["linear", "mlp"] if config.classifier == "both" else [config.classifier]
    accuracies = {}
    for name in names:
        trainer = classify.linear_train if name == "linear" else classify.mlp_train
        net = trainer(feats_tr, train.labels, config.classifier_train, seed)
        accuracies[name] = classify.evaluate(net, feats_te, test.labels)

    if seed_dir is not None and traces is not None:
        _write_loss_trace(seed_dir / "loss_trace.csv", traces)
    if seed_dir is not None and query_log:
        with open(seed_dir / "query_log.jsonl", "w") as fh:
            for rec in query_log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    return SeedResult(
        accuracies=accuracies,
        training_queries=sum(rec["batch_size"] for rec in query_log),
        inference_queries=inference_queries,
        loss_trace=traces,
        query_log=query_log,
    )


def run_experiment(config: ExperimentConfig, write_artifacts: bool = True) -> dict:
    """Full multi-seed experiment; returns the (deterministic) report dict."""
    out = Path(config.out_dir)
    if write_artifacts:
        out.mkdir(parents=True, exist_ok=True)
        save_config(out / "resolved_config.json", config)
    t_start = time.perf_counter()
    full = load_full_dataset(config)
    results = []
    for seed in config.seeds:
        seed_dir = out / f"seed_{seed}" if write_artifacts else None
        try:
            results.append(run_seed(config, full, seed, seed_dir))
        except Exception as exc:
            raise type(exc)(f"stage failure at seed {seed}: {exc}") from exc

    names = ["linear", "mlp"] if config.classifier == "both" else [config.classifier]
    reports = {}
    for name in names:
        accs = [r.accuracies[name] for r in results]
        label = f"{config.method_label} ({name})"
        if len(accs) >= 2:
            rep = classify.aggregate_seeds(
                accs, method=label, n_train=config.dataset.n_train, n_test=config.dataset.n_test
            )
            reports[name] = rep.to_dict()
        else:
            reports[name] = {
                "method": label,
                "accuracies": accs,
                "mean": accs[0],
                "std": None,
                "max": accs[0],
                "n_train": config.dataset.n_train,
                "n_test": config.dataset.n_test,
            }

    report = {
        "schema_version": config.schema_version,
        "method": config.method,
        "method_label": config.method_label,
        "use_qrc": config.use_qrc,
        "dataset": {
            "kind": config.dataset.kind,
            "provenance": full.provenance,
            "n_train": config.dataset.n_train,
            "n_test": config.dataset.n_test,
        },
        "seeds": list(config.seeds),
        "classifiers": reports,
        "reservoir_queries": {
            "training_per_seed": [r.training_queries for r in results],
            "inference_per_seed": [r.inference_queries for r in results],
            "total": sum(r.training_queries + r.inference_queries for r in results),
        },
    }
    if write_artifacts:
        (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
        telemetry = {
            "wall_time_s": time.perf_counter() - t_start,
            "query_wall_times": [
                [rec.get("wall_time_s") for rec in r.query_log] for r in results
            ],
        }
        (out / "telemetry.json").write_text(json.dumps(telemetry, sort_keys=True, indent=2) + "\n")
    return report


SWEEP_AXES = ("lambda", "update_frequency", "n_qubits")


def _config_for_axis(base: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    raw = base.to_dict()
    if axis == "lambda":
        raw["guided"] = dict(raw["guided"], lam=float(value))
    elif axis == "update_frequency":
        raw["guided"] = dict(raw["guided"], update_frequency=int(value))
    elif axis == "n_qubits":
        raw["reservoir"] = dict(raw["reservoir"], n_atoms=int(value))
        raw["latent_dim"] = int(value)
    else:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    raw["out_dir"] = str(Path(base.out_dir) / f"{axis}_{value:g}")
    return ExperimentConfig.from_dict(raw)


def run_sweep(
    base: ExperimentConfig, axis: str, values: list[float], write_artifacts: bool = True
) -> list[dict]:
    """One experiment per axis value; failures are recorded, not fatal."""
    rows = []
    for value in values:
        cfg = _config_for_axis(base, axis, value)
        try:
            report = run_experiment(cfg, write_artifacts=write_artifacts)
            for name, rep in report["classifiers"].items():
                rows.append(
                    {
                        "axis": axis,
                        "value": value,
                        "classifier": name,
                        "mean": rep["mean"],
                        "std": rep["std"],
                        "error": "",
                    }
                )
        except Exception as exc:
            rows.append(
                {"axis": axis, "value": value, "classifier": "", "mean": "", "std": "", "error": str(exc)}
            )
    if write_artifacts:
        out = Path(base.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["axis", "value", "classifier", "mean", "std", "error"]
            )
            writer.writeheader()
            writer.writerows(rows)
    return rows


def export_embeddings(
    config: ExperimentConfig, split: str, out_path: str | Path | None = None
) -> Path:
    """Export reservoir embeddings of one split for external projection.

    The reduction stage is re-fit deterministically from the first seed, so
    a re-export of the same config is byte-identical.
    """
    if not config.use_qrc:
        raise ConfigError("embedding export needs the reservoir stage enabled")
    if split not in ("train", "test"):
        raise ConfigError(f"split must be train or test, got {split!r}")
    full = load_full_dataset(config)
    seed = config.seeds[0]
    train, test = split_train_test(full, config.dataset.n_train, config.dataset.n_test, seed)
    part = train if split == "train" else test
    if len(part) == 0:
        raise ConfigError(f"{split} split is empty")
    lat_tr, lat_te, _, _, _ = _reduce_features(config, train, test, seed, None)
    latents = lat_tr if split == "train" else lat_te
    values = reservoir.embed_batch(latents, config.reservoir, config.n_workers)
    out = Path(out_path) if out_path else Path(config.out_dir) / f"export_{split}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    header = ["label"] + reservoir.embedding_labels(config.reservoir)
    matio.save_csv(out, values, header, label_column=part.labels)
    return out
