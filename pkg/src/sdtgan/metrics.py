"""Evaluation formulas over stub embedders: Frechet distance, IS, paired KL, timing.

All statistics are computed in float64.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .data import TextCond
from .models import CondTensors, Generator, count_params
from .tensor import Tensor

KL_EPS = 1e-12
COV_RIDGE = 1e-6


class SingularCovarianceWarning(UserWarning):
    pass


@dataclass
class FeatureSet:
    features: np.ndarray          # N_samples x D_feat
    source: str = "real"          # real | generated
    embedder: str = "stub"

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(self.features, dtype=np.float64)
        n, d = x.shape
        mu = x.mean(axis=0)
        cov = np.cov(x, rowvar=False).reshape(d, d) if n > 1 else np.zeros((d, d))
        if n <= d:
            warnings.warn(f"{n} samples for {d} features: adding {COV_RIDGE:g}*I to the covariance",
                          SingularCovarianceWarning, stacklevel=3)
            cov = cov + COV_RIDGE * np.eye(d)
        return mu, cov


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The trace of the product root equals that of sqrt(S_a^(1/2) S_b S_a^(1/2)),
    which is symmetric, so it is taken from clamped eigenvalues.
    """
    mu_a, mu_b = np.atleast_1d(np.asarray(mu_a, np.float64)), np.atleast_1d(np.asarray(mu_b, np.float64))
    cov_a, cov_b = np.atleast_2d(np.asarray(cov_a, np.float64)), np.atleast_2d(np.asarray(cov_b, np.float64))
    if mu_a.shape != mu_b.shape or cov_a.shape != cov_b.shape:
        raise ValueError(f"feature dimension mismatch: {mu_a.shape} vs {mu_b.shape}")
    root_a = _psd_sqrt(cov_a)
    middle = root_a @ cov_b @ root_a
    eig = np.linalg.eigvalsh((middle + middle.T) / 2)
    tr_root = np.sqrt(np.clip(eig, 0.0, None)).sum()
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_root)


def frechet_distance(a: FeatureSet, b: FeatureSet) -> float:
    if a.features.shape[1] != b.features.shape[1]:
        raise ValueError(f"feature dimension mismatch: {a.features.shape[1]} vs {b.features.shape[1]}")
    return frechet_from_moments(*a.moments(), *b.moments())


def _check_probs(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"{name} must be N×K, got shape {p.shape}")
    if np.abs(p.sum(axis=1) - 1.0).max() > 1e-5 or (p < 0).any():
        raise ValueError(f"{name} rows must be probability vectors")
    return p


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return (p * (np.log(np.maximum(p, KL_EPS)) - np.log(np.maximum(q, KL_EPS)))).sum(axis=-1)


def inception_score(probs) -> float:
    """exp(mean_i KL(p(y|x_i) || p(y)))."""
    p = _check_probs(probs, "probs")
    marginal = p.mean(axis=0, keepdims=True)
    return float(np.exp(_kl_rows(p, marginal).mean()))


def kl_metric(real_probs, gen_probs) -> float:
    """Mean over caption-paired rows of KL(real_i || gen_i)."""
    p = _check_probs(real_probs, "real_probs")
    q = _check_probs(gen_probs, "gen_probs")
    if p.shape != q.shape:
        raise ValueError(f"unpaired inputs: {p.shape} vs {q.shape}")
    return float(_kl_rows(p, q).mean())


class StubEmbedder:
    """Fixed seeded linear map from a flattened mel to ``dim`` features."""

    def __init__(self, F: int, T: int, dim: int = 32, seed: int = 0):
        rng = np.random.default_rng([seed, 0xE3B])
        self.weights = rng.standard_normal((F * T, dim)) / np.sqrt(F * T)
        self.dim = dim

    def __call__(self, mels: np.ndarray, source: str = "real") -> FeatureSet:
        flat = np.asarray(mels, np.float64).reshape(len(mels), -1)
        return FeatureSet(flat @ self.weights, source, "stub-linear")


class StubClassifier:
    """Fixed seeded linear map from a flattened mel to K class posteriors."""

    def __init__(self, F: int, T: int, n_classes: int, seed: int = 0):
        rng = np.random.default_rng([seed, 0xC1A55])
        self.weights = rng.standard_normal((F * T, n_classes)) * (4.0 / np.sqrt(F * T))
        self.n_classes = n_classes

    def __call__(self, mels: np.ndarray) -> np.ndarray:
        flat = np.asarray(mels, np.float64).reshape(len(mels), -1)
        logits = flat @ self.weights
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)


def timing_report(G: Generator, conds: list[TextCond], repetitions: int = 10, seed: int = 0) -> dict:
    """Wall-clock of single-sample generator passes, cycling through ``conds``."""
    if repetitions < 10:
        raise ValueError("repetitions must be >= 10")
    rng = np.random.default_rng(seed)
    times = []
    for r in range(repetitions):
        cond = CondTensors.from_conds([conds[r % len(conds)]])
        z = Tensor(rng.standard_normal((1, G.cfg.c_z)))
        t0 = time.perf_counter()
        G.forward(z, cond)
        times.append((time.perf_counter() - t0) * 1000.0)
    times = np.array(times)
    return {"mean_ms": float(times.mean()), "median_ms": float(np.median(times)),
            "p95_ms": float(np.percentile(times, 95)), "params": count_params(G)}
