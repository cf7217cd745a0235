"""Exact (O(n^2)) t-SNE for embedding penultimate-layer features in 2-D."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, NumericalError


@dataclass(frozen=True)
class TSNEConfig:
    perplexity: float = 30.0
    iters: int = 1000
    learning_rate: float = 200.0
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    momentum_switch_iter: int = 250
    init_scale: float = 1e-4
    min_gain: float = 0.01
    seed: int = 0


@dataclass
class AffinityMatrix:
    P: np.ndarray
    perplexity: float
    row_entropy_bits: np.ndarray = field(repr=False)


@dataclass
class EmbeddingRun:
    Y: np.ndarray
    kl_trace: np.ndarray
    config: TSNEConfig


def squared_distances(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _row_distribution(d_row: np.ndarray, beta: float):
    """Gaussian conditional over one row (self excluded) and its entropy in bits."""
    shifted = d_row - d_row.min()
    w = np.exp(-beta * shifted)
    total = w.sum()
    p = w / total
    h_nats = np.log(total) + beta * np.dot(shifted, p)
    return p, h_nats / np.log(2.0)


def conditional_affinities(d2: np.ndarray, perplexity: float, tol: float = 1e-5,
                           max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise bisection on the Gaussian precision so each row's entropy hits log2(perplexity).

    Returns the conditional matrix (row i holds p_{j|i}) and the achieved entropies.
    """
    n = d2.shape[0]
    target = np.log2(perplexity)
    cond = np.zeros((n, n))
    entropies = np.empty(n)
    for i in range(n):
        row = np.delete(d2[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            p, h = _row_distribution(row, beta)
            if abs(h - target) <= tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if np.isinf(hi) else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        else:
            raise NumericalError(
                f"bandwidth search for row {i} did not reach entropy {target:.6f} bits "
                f"within {max_iter} iterations (last {h:.6f})")
        cond[i, np.arange(n) != i] = p
        entropies[i] = h
    return cond, entropies


def perplexity_affinities(features, perplexity: float = 30.0) -> AffinityMatrix:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"features must be n x d, got shape {x.shape}")
    n = x.shape[0]
    if n < 4:
        raise ConfigError(f"need at least 4 points, got {n}")
    if not 2.0 <= perplexity <= (n - 1) / 3.0:
        raise ConfigError(f"perplexity {perplexity} infeasible for {n} points (allowed [2, {(n - 1) / 3:.3g}])")
    cond, entropies = conditional_affinities(squared_distances(x), perplexity)
    P = (cond + cond.T) / (2.0 * n)
    return AffinityMatrix(P, float(perplexity), entropies)


def max_feasible_perplexity(n: int) -> float:
    return (n - 1) / 3.0


def small_sample_learning_rate(n: int, exaggeration: float = 12.0) -> float:
    """max(n / exaggeration / 4, 50): the fixed rate of 200 overshoots on a few dozen points."""
    return max(n / exaggeration / 4.0, 50.0)


def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def _student_t(Y):
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    return num, num / num.sum()


def tsne_optimize(P: AffinityMatrix | np.ndarray, cfg: TSNEConfig = TSNEConfig(), dims: int = 2) -> EmbeddingRun:
    """Momentum gradient descent on KL(P || Q) with early exaggeration and per-coordinate gains."""
    P = np.asarray(P.P if isinstance(P, AffinityMatrix) else P, dtype=np.float64)
    if cfg.iters < 1:
        raise ConfigError(f"iters must be >= 1, got {cfg.iters}")
    n = P.shape[0]
    rng = np.random.default_rng(cfg.seed)
    Y = rng.standard_normal((n, dims)) * cfg.init_scale
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    floor = np.finfo(np.float64).tiny
    trace = np.empty(cfg.iters)

    for it in range(cfg.iters):
        early = it < cfg.exaggeration_iters
        target = P * cfg.exaggeration if early else P
        num, Q = _student_t(Y)
        Qc = np.maximum(Q, floor)
        trace[it] = kl_divergence(P, Qc)

        W = (target - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite t-SNE gradient at iteration {it}")

        momentum = cfg.momentum_early if it < cfg.momentum_switch_iter else cfg.momentum_late
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, cfg.min_gain, out=gains)
        velocity = momentum * velocity - cfg.learning_rate * gains * grad
        Y = Y + velocity
        Y -= Y.mean(axis=0)

    return EmbeddingRun(Y, trace, cfg)
