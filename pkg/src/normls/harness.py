"""Training, evaluation and embedding runs with on-disk artifacts.

A training run follows the loop: initialise from the seed, then per epoch
shuffle, step SGD with momentum on the configured loss, and evaluate on the
validation split. Training stops at the epoch cap or once the validation loss
has failed to improve by ``min_delta`` for ``convergence_patience`` epochs.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import svg
from .checkpoint import load_tensors, save_tensors
from .config import RunConfig, dump_config
from .data import (LabeledDataset, gen_synthetic, load_cifar10, load_dataset, split,
                   stratified_subset)
from .errors import ConfigError, DomainError, NumericalError
from .losses import SmoothingConfig, batch_loss, per_sample_losses
from .metrics import confusion_matrix, ece, prf1
from .nn import (MiniResNetParams, infer_n_classes, init_params, mini_resnet_forward,
                 params_from_arrays)
from .tsne import TSNEConfig, max_feasible_perplexity, perplexity_affinities, tsne_optimize

log = logging.getLogger(__name__)

EVAL_CHUNK = 256
LR_MILESTONES = (0.5, 0.75)
LR_DECAY = 0.1


# ---------------------------------------------------------------------------
# datasets

def source_dataset(cfg: RunConfig) -> LabeledDataset:
    if cfg.dataset == "synthetic":
        size = (cfg.image_size, cfg.image_size)
        ds = gen_synthetic(cfg.synthetic_counts, size, seed=cfg.data_seed)
    else:
        if not cfg.dataset_path:
            raise ConfigError("dataset cifar10 needs dataset_path")
        ds = load_cifar10(cfg.dataset_path, "train")
    if cfg.subset:
        ds = stratified_subset(ds, cfg.subset, seed=cfg.data_seed)
    return ds


def train_val(cfg: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    return split(source_dataset(cfg), cfg.val_fraction, seed=cfg.data_seed)


def resolve_dataset(spec: str, cfg: RunConfig) -> LabeledDataset:
    """Dataset spec: ``train``/``val``/``all`` of the configured source, ``cifar10-test``, or a saved dataset file."""
    if spec in ("train", "val"):
        return train_val(cfg)[0 if spec == "train" else 1]
    if spec == "all":
        return source_dataset(cfg)
    if spec == "cifar10-test":
        if not cfg.dataset_path:
            raise ConfigError("cifar10-test needs dataset_path in the config")
        return load_cifar10(cfg.dataset_path, "test")
    path = Path(spec)
    if path.is_file():
        return load_dataset(path)
    raise ConfigError(f"unknown dataset spec {spec!r} (train, val, all, cifar10-test, or a dataset file)")


# ---------------------------------------------------------------------------
# evaluation

def forward_all(params: MiniResNetParams, ds: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
    """Logits and penultimate features for every sample, no graph recorded."""
    logits, feats = [], []
    with ad.no_grad():
        for start in range(0, len(ds), EVAL_CHUNK):
            z, f = mini_resnet_forward(params, ds.images[start : start + EVAL_CHUNK])
            logits.append(z.data)
            feats.append(f.data)
    return np.concatenate(logits), np.concatenate(feats)


def softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class Evaluation:
    report: dict
    confusion_csv: str
    reliability_csv: str
    reliability: object
    features: np.ndarray = field(repr=False)


def evaluate_params(params: MiniResNetParams, ds: LabeledDataset, cfg: RunConfig) -> Evaluation:
    logits, feats = forward_all(params, ds)
    smoothing = SmoothingConfig(ds.n_classes, cfg.epsilon)
    with ad.no_grad():
        loss = float(np.mean(per_sample_losses(logits, ds.labels, cfg.loss, smoothing).data))
    preds = logits.argmax(axis=1)
    cm = confusion_matrix(preds, ds.labels, ds.n_classes)
    rep = prf1(cm)
    table = ece(softmax_rows(logits), ds.labels, cfg.ece_bins)
    report = {
        "n_samples": len(ds),
        "loss": loss,
        "accuracy": rep.accuracy,
        "precision": rep.macro_precision,
        "recall": rep.macro_recall,
        "f1": rep.macro_f1,
        "ece": table.ece,
    }
    for c, name in enumerate(ds.class_names):
        report[f"precision_{name}"] = float(rep.precision[c])
        report[f"recall_{name}"] = float(rep.recall[c])
        report[f"f1_{name}"] = float(rep.f1[c])
        report[f"undefined_{name}"] = bool(rep.precision_undefined[c] or rep.recall_undefined[c]
                                           or rep.f1_undefined[c])
    return Evaluation(report, cm.to_csv(ds.class_names), table.to_csv(), table, feats)


# ---------------------------------------------------------------------------
# training

@dataclass
class RunArtifacts:
    output_dir: Path
    metrics: dict
    loss_curve: list[tuple[int, float, float]]
    params: MiniResNetParams = field(repr=False)

    def path(self, name: str) -> Path:
        return self.output_dir / name


def learning_rate_at(cfg: RunConfig, epoch: int) -> float:
    lr = cfg.learning_rate
    for frac in LR_MILESTONES:
        milestone = int(frac * cfg.epochs)
        if milestone >= 1 and epoch >= milestone:
            lr *= LR_DECAY
    return lr


def _prepare_output(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc.strerror}") from exc
    return out


def _losscurve_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss"])
    for epoch, tr, va in rows:
        w.writerow([epoch, repr(tr), repr(va)])
    return buf.getvalue()


def train(cfg: RunConfig) -> RunArtifacts:
    out = _prepare_output(cfg.output_dir)
    train_ds, val_ds = train_val(cfg)
    n_classes = train_ds.n_classes
    smoothing = SmoothingConfig(n_classes, cfg.epsilon)
    params = init_params(n_classes, seed=cfg.seed, in_channels=train_ds.images.shape[1], padding=cfg.padding)
    velocity = {name: np.zeros_like(t.data) for name, t in params}
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    log.info("training %s/%s on %d samples (val %d)", cfg.loss, cfg.padding, len(train_ds), len(val_ds))

    curve = []
    best, stale = math.inf, 0
    evaluation = None
    for epoch in range(cfg.epochs):
        lr = learning_rate_at(cfg, epoch)
        order = shuffle_rng.permutation(len(train_ds))
        total = 0.0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            try:
                logits, _ = mini_resnet_forward(params, train_ds.images[idx])
                loss = batch_loss(logits, train_ds.labels[idx], cfg.loss, smoothing)
            except DomainError as exc:
                raise NumericalError(f"training diverged at epoch {epoch + 1}, batch {b + 1}: {exc}") from exc
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            ad.backward(loss)
            for name, t in params:
                v = velocity[name]
                v *= cfg.momentum
                v += t.grad
                t.data -= lr * v
            total += value * idx.size
        train_loss = total / len(train_ds)
        evaluation = evaluate_params(params, val_ds, cfg)
        val_loss = evaluation.report["loss"]
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch + 1}")
        curve.append((epoch + 1, train_loss, val_loss))
        log.info("epoch %d lr %.4g train %.5f val %.5f acc %.4f", epoch + 1, lr, train_loss, val_loss,
                 evaluation.report["accuracy"])
        if val_loss < best - cfg.min_delta:
            best, stale = val_loss, 0
        else:
            stale += 1
            if stale >= cfg.convergence_patience:
                log.info("validation loss stalled for %d epochs, stopping", stale)
                break

    metrics = {
        "loss_kind": cfg.loss,
        "padding": cfg.padding,
        "epsilon": cfg.epsilon,
        "seed": cfg.seed,
        "epochs_completed": len(curve),
        "train_loss": curve[-1][1],
        **evaluation.report,
    }
    save_tensors(out / "checkpoint.bin", params.arrays())
    (out / "config.echo").write_text(dump_config(cfg), encoding="utf-8")
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n", encoding="utf-8")
    (out / "losscurve.csv").write_text(_losscurve_csv(curve), encoding="utf-8")
    epochs = [r[0] for r in curve]
    (out / "losscurve.svg").write_text(svg.line_plot(
        {"train": (epochs, [r[1] for r in curve]), "validation": (epochs, [r[2] for r in curve])},
        f"Loss per epoch ({cfg.loss}, {cfg.padding} padding)", "epoch", "loss"), encoding="utf-8")
    (out / "confusion.csv").write_text(evaluation.confusion_csv, encoding="utf-8")
    (out / "reliability.csv").write_text(evaluation.reliability_csv, encoding="utf-8")
    (out / "reliability.svg").write_text(svg.reliability_plot(evaluation.reliability), encoding="utf-8")
    if cfg.embed:
        _write_embedding(out, evaluation.features, val_ds, cfg, _tsne_config(cfg, len(val_ds)))
    return RunArtifacts(out, metrics, curve, params)


# ---------------------------------------------------------------------------
# checkpoints, evaluation and embedding entry points

def load_checkpoint(path, cfg: RunConfig, n_classes: int | None = None, in_channels: int = 3) -> MiniResNetParams:
    arrays = load_tensors(path)
    if n_classes is None:
        n_classes = infer_n_classes(arrays)
    return params_from_arrays(arrays, n_classes, in_channels=in_channels, padding=cfg.padding)


def evaluate(checkpoint_path, dataset: LabeledDataset, cfg: RunConfig) -> dict:
    params = load_checkpoint(checkpoint_path, cfg, dataset.n_classes, dataset.images.shape[1])
    return evaluate_params(params, dataset, cfg).report


def _tsne_config(cfg: RunConfig, n: int, seed: int | None = None) -> TSNEConfig:
    perplexity = cfg.tsne_perplexity
    if perplexity > max_feasible_perplexity(n):
        perplexity = max(2.0, math.floor(max_feasible_perplexity(n)))
        log.warning("perplexity %.3g infeasible for %d points, using %.3g", cfg.tsne_perplexity, n, perplexity)
    return TSNEConfig(perplexity=perplexity, iters=cfg.tsne_iters, seed=cfg.seed if seed is None else seed)


def _embedding_csv(Y, labels) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label", "y1", "y2"])
    for i, ((a, b), lab) in enumerate(zip(Y, labels)):
        w.writerow([i, int(lab), repr(float(a)), repr(float(b))])
    return buf.getvalue()


def _write_embedding(out: Path, features, ds: LabeledDataset, cfg: RunConfig, tsne_cfg: TSNEConfig):
    if len(ds) > cfg.embed_budget:
        raise ConfigError(f"{len(ds)} samples exceed the exact t-SNE budget of {cfg.embed_budget}; "
                          f"use --subsample")
    affinities = perplexity_affinities(features, tsne_cfg.perplexity)
    run = tsne_optimize(affinities, tsne_cfg)
    (out / "embedding.csv").write_text(_embedding_csv(run.Y, ds.labels), encoding="utf-8")
    (out / "embedding.svg").write_text(
        svg.scatter_plot(run.Y, ds.labels, ds.class_names, "t-SNE of penultimate features"), encoding="utf-8")
    return run


def embed(checkpoint_path, dataset: LabeledDataset, cfg: RunConfig, out_dir, *,
          perplexity: float | None = None, subsample: int = 0, seed: int | None = None):
    """Embed penultimate features of ``dataset``; returns the t-SNE run."""
    if subsample and subsample < len(dataset):
        dataset = stratified_subset(dataset, subsample, seed=cfg.seed if seed is None else seed)
    if len(dataset) > cfg.embed_budget:
        raise ConfigError(f"{len(dataset)} samples exceed the exact t-SNE budget of {cfg.embed_budget}; "
                          f"pass --subsample")
    params = load_checkpoint(checkpoint_path, cfg, dataset.n_classes, dataset.images.shape[1])
    _, feats = forward_all(params, dataset)
    if perplexity is not None:
        cfg = cfg.replace(tsne_perplexity=perplexity)
    out = _prepare_output(out_dir)
    return _write_embedding(out, feats, dataset, cfg, _tsne_config(cfg, len(dataset), seed))
