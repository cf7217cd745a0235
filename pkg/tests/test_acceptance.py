"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line.

Criteria 7 and 8 train the full synthetic set for 30 epochs and take roughly
a quarter of an hour on one core. Criterion 9 needs the CIFAR-10 binary
batches in ``$CIFAR10_DIR`` and is skipped otherwise.
"""

import json
import math
import os
import time
from contextlib import contextmanager
from pathlib import Path
from unittest import mock

import numpy as np
import pytest

from conftest import record_criterion
from normls import autodiff as ad
from normls import harness, nn, tsne
from normls.autodiff import Tensor
from normls.config import RunConfig
from normls.data import cifar10_available, load_cifar10
from normls.losses import SmoothingConfig, batch_loss, ce_loss, lsce_loss, norm_lsce_loss, one_hot
from normls.metrics import ConfusionMatrix, ece, prf1
from oracles import (brute_force_ratio, cluster_separation, definition_prf1, entropy_bits, scalar_nlsce,
                     two_clusters)

pytestmark = pytest.mark.acceptance

MAJORITY_BASELINE = 500 / 858


def _check(number, title, results, elapsed=None, limit=None, extra=""):
    """``results`` maps a sub-check label to a bool; all must hold (and the runtime limit)."""
    failed = [name for name, ok in results.items() if not ok]
    detail = []
    if elapsed is not None:
        detail.append(f"{elapsed:.1f}s" + (f" (limit {limit}s)" if limit else ""))
        if limit and elapsed >= limit:
            failed.append("runtime")
    if failed:
        detail.append("failed: " + ", ".join(failed))
    if extra:
        detail.append(extra)
    record_criterion(number, title, not failed, "; ".join(detail))
    assert not failed, f"criterion {number}: {failed} {extra}"


# ---------------------------------------------------------------------------

@contextmanager
def _relu_patterns():
    """Collect the sign pattern of every relu input evaluated inside the block."""
    seen, relu = [], ad.relu

    def recording(a):
        seen.append(ad.as_tensor(a).data > 0)
        return relu(a)

    with mock.patch.object(ad, "relu", recording):
        yield seen


def _full_network_grad_errors(seed: int, padding: str, step: float = 1e-4, coords_per_tensor: int = 3):
    """Worst relative error over sampled coordinates of every parameter tensor.

    Central differences only estimate the derivative when both probes stay on the
    same side of every relu kink, so coordinates whose probes flip an activation are
    skipped (and counted).
    """
    rng = np.random.default_rng(seed)
    params = nn.init_params(3, seed=seed, padding=padding)
    for _, t in params:
        # perturb every tensor so no gain or shift is at a special value
        t.data[...] = t.data + rng.normal(scale=0.1, size=t.shape)
    images = rng.random((2, 3, 8, 8))
    labels = rng.integers(3, size=2)
    cfg = SmoothingConfig(3, 0.1)
    worst, skipped = 0.0, 0
    for name, t in params:
        def loss_of(value, name=name):
            swapped = nn.MiniResNetParams(params.n_classes, params.in_channels, params.padding,
                                          {**params.tensors, name: value})
            logits, _ = nn.mini_resnet_forward(swapped, images)
            return batch_loss(logits, labels, "nlsce", cfg)

        def pattern(value):
            with ad.no_grad(), _relu_patterns() as seen:
                loss_of(Tensor(value))
            return seen

        base = pattern(t.data)
        coords = []
        for i in rng.permutation(t.size):
            probes = []
            for sign in (1.0, -1.0):
                v = t.data.copy()
                v.flat[i] += sign * step
                probes.append(pattern(v))
            if all(np.array_equal(a, b) for p in probes for a, b in zip(base, p)):
                coords.append(int(i))
            else:
                skipped += 1
            if len(coords) == min(coords_per_tensor, t.size):
                break
        worst = max(worst, ad.grad_check(loss_of, t.data, step, coords=coords))
    return worst, skipped


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    loss_err = 0.0
    for n in (2, 3, 10):
        cfg = SmoothingConfig(n, 0.1)
        for _ in range(10):
            z, c = rng.normal(size=n) * 2, int(rng.integers(n))
            loss_err = max(loss_err,
                           ad.grad_check(lambda t: ce_loss(t, one_hot(c, n)), z),
                           ad.grad_check(lambda t: lsce_loss(t, c, cfg), z),
                           ad.grad_check(lambda t: norm_lsce_loss(t, c, cfg), z))

    conv_err = 0.0
    x = Tensor(rng.normal(size=(2, 3, 7, 7)))
    bias = Tensor(rng.normal(size=4))
    for padding in ("zero", "partial"):
        for stride in (1, 2):
            spec = nn.Conv2dSpec(3, 4, (3, 3), stride, 1, padding)
            proj = Tensor(rng.normal(size=(2, 4) + spec.output_hw(7, 7)))
            conv_err = max(conv_err, ad.grad_check(
                lambda w: ad.sum(ad.mul(nn.conv2d_forward(x, spec, w, bias), proj)),
                rng.normal(size=(4, 3, 3, 3))))

    net = [_full_network_grad_errors(seed, ("zero", "partial")[seed % 2]) for seed in range(5)]
    net_err, kinks = max(e for e, _ in net), sum(k for _, k in net)
    elapsed = time.perf_counter() - start
    _check(1, "gradient suite", {
        f"losses N in 2/3/10 (max rel err {loss_err:.2e})": loss_err < 1e-4,
        f"conv weights both paddings (max rel err {conv_err:.2e})": conv_err < 1e-4,
        f"mini-resnet loss, 5 seeds (max rel err {net_err:.2e})": net_err < 1e-4,
    }, elapsed, 120, f"errors loss {loss_err:.2e} conv {conv_err:.2e} net {net_err:.2e}"
      f" ({kinks} kink-straddling coordinates skipped)")


def test_criterion_2_loss_identities():
    rng = np.random.default_rng(2)
    ok = {"ce uniform == ln N": True, "lsce(eps=0) == ce": True, "sum_j nlsce == 1": True,
          "nlsce uniform == 1/N": True, "shift invariance": True}
    for n in range(2, 11):
        if abs(ce_loss(np.zeros(n), one_hot(0, n)).item() - math.log(n)) > 1e-12:
            ok["ce uniform == ln N"] = False
        for c in range(n):
            if abs(norm_lsce_loss(np.zeros(n), c, SmoothingConfig(n, 0.1)).item() - 1 / n) > 1e-12:
                ok["nlsce uniform == 1/N"] = False
    for _ in range(100):
        n = int(rng.integers(2, 11))
        z = rng.normal(size=n) * 3
        cfg, cfg0 = SmoothingConfig(n, 0.1), SmoothingConfig(n, 0.0)
        shift = rng.uniform(-50, 50)
        total = 0.0
        for c in range(n):
            if lsce_loss(z, c, cfg0).item() != ce_loss(z, one_hot(c, n)).item():
                ok["lsce(eps=0) == ce"] = False
            v = norm_lsce_loss(z, c, cfg).item()
            total += v
            for fn, value in ((norm_lsce_loss, v), (lsce_loss, lsce_loss(z, c, cfg).item())):
                if abs(fn(z + shift, c, cfg).item() - value) > 1e-10:
                    ok["shift invariance"] = False
        if abs(total - 1.0) > 1e-12:
            ok["sum_j nlsce == 1"] = False
    _check(2, "loss identities", ok)


def test_criterion_3_normalized_worked_value():
    oracle = scalar_nlsce((0.7, 0.2, 0.1), 0, 0.1)
    got = norm_lsce_loss(np.log([0.7, 0.2, 0.1]), 0, SmoothingConfig(3, 0.1)).item()
    _check(3, "normalized loss worked value", {
        "matches scalar oracle within 1e-6": abs(got - oracle) <= 1e-6,
        "oracle is about 0.1085": abs(oracle - 0.1085) < 1e-4,
    }, extra=f"implementation {got:.12f}, oracle {oracle:.12f}")


def test_criterion_4_partial_conv_oracle():
    start = time.perf_counter()
    spec = nn.Conv2dSpec(1, 1, (3, 3), 1, 1, "partial")
    values, counts = np.unique(nn.partial_scale_map((32, 32), spec), return_counts=True)
    census = dict(zip(values.tolist(), counts.tolist()))

    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(2, 3, 9, 11)))
    w, b = Tensor(rng.normal(size=(5, 3, 3, 3))), Tensor(rng.normal(size=5))
    zero = nn.conv2d_forward(x, nn.Conv2dSpec(3, 5, (3, 3), 2, 0, "zero"), w, b).data
    part = nn.conv2d_forward(x, nn.Conv2dSpec(3, 5, (3, 3), 2, 0, "partial"), w, b).data

    agree, tried = 0, 0
    while tried < 20:
        h, wd = (int(v) for v in rng.integers(1, 17, size=2))
        k, stride, pad = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(0, 3))
        if pad >= k or h + 2 * pad < k or wd + 2 * pad < k:
            continue  # windows with no valid cell are a configuration error, tested elsewhere
        tried += 1
        got = nn.partial_scale_map((h, wd), nn.Conv2dSpec(1, 1, (k, k), stride, pad, "partial"))
        agree += np.array_equal(got, brute_force_ratio(h, wd, k, k, stride, pad))
    elapsed = time.perf_counter() - start
    _check(4, "partial-conv oracle", {
        "32x32 census {4 x 9/4, 120 x 1.5, 900 x 1}": census == {2.25: 4, 1.5: 120, 1.0: 900},
        "pad 0 bitwise equal": zero.tobytes() == part.tobytes(),
        f"window-count oracle {agree}/20": agree == 20,
    }, elapsed, 60)


def test_criterion_5_metric_oracles():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 8))
        counts = rng.integers(0, 20, size=(n, n))
        counts[rng.random((n, n)) < 0.2] = 0
        counts[0, 0] += 1
        r = prf1(ConfusionMatrix(counts))
        ref = np.array(definition_prf1(counts.tolist()))
        worst = max(worst, np.abs(np.stack([r.precision, r.recall, r.f1], axis=1) - ref).max())
    hand = ece(np.array([[0.6, 0.4], [0.2, 0.8]]), [0, 0], bins=1).ece
    _check(5, "metric oracles", {
        f"prf1 on 50 matrices (max abs err {worst:.1e})": worst <= 1e-12,
        f"single-bin ECE {hand!r} == 0.2": abs(hand - 0.2) <= 1e-12,
    })


def test_criterion_6_tsne_suite():
    start = time.perf_counter()
    x = np.random.default_rng(6).normal(size=(10, 4))
    cond, _ = tsne.conditional_affinities(tsne.squared_distances(x), 3.0)
    entropy_err = max(abs(entropy_bits(row) - math.log2(3.0)) for row in cond)
    P = tsne.perplexity_affinities(x, 3.0).P
    kl_self = tsne.kl_divergence(P, P / P.sum())

    features, labels = two_clusters(60, 8, seed=6)
    # default perplexity 30 clamped to the largest feasible value for 60 points
    perplexity = math.floor(tsne.max_feasible_perplexity(60))
    cfg = tsne.TSNEConfig(perplexity=perplexity, learning_rate=tsne.small_sample_learning_rate(60))
    run = tsne.tsne_optimize(tsne.perplexity_affinities(features, perplexity), cfg)
    between, radius = cluster_separation(run.Y, labels)
    kl_end = run.kl_trace[run.config.exaggeration_iters - 1]
    elapsed = time.perf_counter() - start
    _check(6, "t-SNE suite", {
        f"row entropy error {entropy_err:.1e} <= 1e-5": entropy_err <= 1e-5,
        f"KL(P||P) = {kl_self:.1e}": abs(kl_self) <= 1e-12,
        f"cluster separation {between / radius:.1f}x > 5x": between > 5 * radius,
        f"final KL {run.kl_trace[-1]:.4f} < {kl_end:.4f}": run.kl_trace[-1] < kl_end,
    }, elapsed, 180)


# ---------------------------------------------------------------------------
# desk-scale training

@pytest.fixture(scope="module")
def trend_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("trend")
    runs, start = {}, time.perf_counter()
    jobs = [(loss, 7) for loss in ("ce", "lsce", "nlsce")] + [(loss, s) for s in (1, 2, 3) for loss in ("ce", "nlsce")]
    for loss, seed in jobs:
        cfg = RunConfig(loss=loss, seed=seed, output_dir=str(root / f"{loss}-seed{seed}"), embed=False)
        runs[loss, seed] = harness.train(cfg)
    return runs, time.perf_counter() - start, root


def test_criterion_7_training_trend(trend_runs):
    runs, elapsed, _ = trend_runs
    results, notes = {}, []
    for loss in ("ce", "lsce", "nlsce"):
        acc = runs[loss, 7].metrics["accuracy"]
        results[f"{loss} seed 7 val acc {acc:.4f} > {MAJORITY_BASELINE:.4f}"] = acc > MAJORITY_BASELINE
    ece_ce = np.array([runs["ce", s].metrics["ece"] for s in (1, 2, 3)])
    ece_nl = np.array([runs["nlsce", s].metrics["ece"] for s in (1, 2, 3)])
    diff = ece_nl - ece_ce
    direction = ece_nl.mean() <= ece_ce.mean()
    within_noise = abs(diff.mean()) <= diff.std(ddof=1)
    notes.append(f"mean ECE nlsce {ece_nl.mean():.4f} vs ce {ece_ce.mean():.4f} "
                 f"(per-seed diff std {diff.std(ddof=1):.4f})")
    if not direction and within_noise:
        notes.append("calibration direction reversed but within one std, reported only")
    results["nlsce mean ECE <= ce mean ECE (or within one std)"] = direction or within_noise
    _check(7, "desk-scale training trend", results, elapsed, 1200, "; ".join(notes))


def test_criterion_8_determinism(trend_runs, tmp_path):
    runs, _, _ = trend_runs
    first = runs["nlsce", 7].output_dir
    again = harness.train(RunConfig(loss="nlsce", seed=7, output_dir=str(tmp_path / "again"), embed=False))
    same = {name: (first / name).read_bytes() == (again.output_dir / name).read_bytes()
            for name in ("metrics.json", "losscurve.csv")}
    _check(8, "determinism", {f"{name} byte-identical": ok for name, ok in same.items()})


CIFAR_DIR = os.environ.get("CIFAR10_DIR", "")


@pytest.mark.skipif(not (CIFAR_DIR and cifar10_available(CIFAR_DIR)),
                    reason="CIFAR-10 binary batches not found (set CIFAR10_DIR)")
def test_criterion_9_cifar10(tmp_path):
    start = time.perf_counter()
    train = load_cifar10(CIFAR_DIR, "train")
    test = load_cifar10(CIFAR_DIR, "test")
    cfg = RunConfig(dataset="cifar10", dataset_path=CIFAR_DIR, subset=5000, epochs=10, loss="ce",
                    output_dir=str(tmp_path / "cifar"), embed=False)
    acc = harness.train(cfg).metrics["accuracy"]
    elapsed = time.perf_counter() - start
    _check(9, "CIFAR-10 ingestion", {
        "50000 train samples, 5000 per class": len(train) == 50000 and set(train.class_counts) == {5000},
        "10000 test samples, 1000 per class": len(test) == 10000 and set(test.class_counts) == {1000},
        f"5000-sample subset val acc {acc:.4f} > 0.25": acc > 0.25,
    }, elapsed, 1800)


def test_acceptance_summary_is_written(trend_runs):
    """Persist the per-run numbers next to the runs for the experiment notes."""
    runs, elapsed, root = trend_runs
    summary = {f"{loss}-seed{seed}": {k: r.metrics[k] for k in ("accuracy", "ece", "f1", "epochs_completed")}
               for (loss, seed), r in runs.items()}
    (root / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    assert Path(root / "summary.json").is_file()
