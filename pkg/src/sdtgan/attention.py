"""Time-frequency cross-attention.

Both mechanisms pool a channels-last grid ``x`` (F×T×C, optionally with a
leading batch axis) into a per-frequency summary ``x_f`` (F×C, mean over time)
and a per-time summary ``x_t`` (T×C, mean over frequency), build attention
maps between axes from those summaries, fuse the maps into one F×T weight
grid, and apply it channel-wise to a value projection with a residual:

    x_out = x + (x @ v) * W[..., None]

Self attention attends frequency->time and time->frequency and fuses by
``W = W_f2t + W_t2f^T``. Multi (conditioned) attention lets each condition
row attend to frequency and to time and fuses by ``W = W_c2f^T @ W_c2t``.
Logits are raw dot products, with no scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .tensor import DimensionError, Tensor

MAP_KINDS = ("f2t", "t2f", "c2f", "c2t", "fused_self", "fused_multi")


def hidden_channels(c_x: int) -> int:
    return max(c_x // 2, 8)


def _init(rng: np.random.Generator, shape, std=0.02) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(np.float32)


@dataclass
class SelfTFCAParams:
    q_f: Tensor
    k_f: Tensor
    q_t: Tensor
    k_t: Tensor
    v: Tensor

    @classmethod
    def init(cls, c_x: int, rng: np.random.Generator, c_h: int | None = None) -> "SelfTFCAParams":
        c_h = c_h or hidden_channels(c_x)
        mk = lambda shape: Tensor(_init(rng, shape), requires_grad=True)
        return cls(mk((c_x, c_h)), mk((c_x, c_h)), mk((c_x, c_h)), mk((c_x, c_h)),
                   Tensor(np.zeros((c_x, c_x), np.float32), requires_grad=True))

    def named(self) -> dict[str, Tensor]:
        return {"q_f": self.q_f, "k_f": self.k_f, "q_t": self.q_t, "k_t": self.k_t, "v": self.v}


@dataclass
class MultiTFCAParams:
    q_f: Tensor  # C_c x C_h
    q_t: Tensor  # C_c x C_h
    k_f: Tensor  # C_x x C_h
    k_t: Tensor  # C_x x C_h
    v: Tensor    # C_x x C_x

    @classmethod
    def init(cls, c_x: int, c_c: int, rng: np.random.Generator,
             c_h: int | None = None) -> "MultiTFCAParams":
        c_h = c_h or hidden_channels(c_x)
        mk = lambda shape: Tensor(_init(rng, shape), requires_grad=True)
        return cls(mk((c_c, c_h)), mk((c_c, c_h)), mk((c_x, c_h)), mk((c_x, c_h)),
                   Tensor(np.zeros((c_x, c_x), np.float32), requires_grad=True))

    def named(self) -> dict[str, Tensor]:
        return {"q_f": self.q_f, "q_t": self.q_t, "k_f": self.k_f, "k_t": self.k_t, "v": self.v}


@dataclass
class AttentionMap:
    """A dumped attention map with the axis semantics of its kind."""

    weights: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in MAP_KINDS:
            raise ValueError(f"unknown attention map kind {self.kind!r}")

    def row_sums(self) -> np.ndarray:
        return self.weights.astype(np.float64).sum(axis=-1)

    def check(self, n_cond: int | None = None, atol_rows=1e-5, atol_sum=1e-3) -> None:
        """Raise AssertionError if the map violates its normalization identity."""
        w = self.weights.astype(np.float64)
        if self.kind in ("f2t", "t2f", "c2f", "c2t"):
            err = np.abs(self.row_sums() - 1.0).max()
            if err > atol_rows:
                raise AssertionError(f"{self.kind} rows deviate from 1 by {err:.3g}")
        elif self.kind == "fused_self":
            F, T = w.shape[-2:]
            total = w.sum(axis=(-2, -1))
            if np.abs(total - (F + T)).max() > atol_sum:
                raise AssertionError(f"fused_self grand sum {total} != F+T={F + T}")
        else:
            if n_cond is None:
                raise ValueError("fused_multi check needs n_cond")
            total = w.sum(axis=(-2, -1))
            if np.abs(total - n_cond).max() > atol_sum:
                raise AssertionError(f"fused_multi grand sum {total} != {n_cond}")


def axis_pool(x) -> tuple[Tensor, Tensor]:
    """Return (x_f, x_t): means over time and over frequency."""
    x = tc.as_tensor(x)
    if x.ndim < 3:
        raise DimensionError(f"expected a F×T×C grid, got shape {x.shape}")
    fa = x.ndim - 3
    return tc.mean_axis(x, fa + 1), tc.mean_axis(x, fa)


def apply_fused(x: Tensor, v: Tensor, fused: Tensor) -> Tensor:
    """Residual update ``x + (x @ v) * fused`` with the F×T map broadcast over channels."""
    value = tc.matmul(x, v)
    return tc.add(x, tc.mul(value, tc.reshape(fused, fused.shape + (1,))))


def self_tfca(x, p: SelfTFCAParams) -> tuple[Tensor, dict[str, Tensor]]:
    x = tc.as_tensor(x)
    c_x = x.shape[-1]
    if p.q_f.shape[0] != c_x or p.v.shape != (c_x, c_x):
        raise DimensionError(f"self TF-CA params expect {p.q_f.shape[0]} channels, input has shape {x.shape}")
    x_f, x_t = axis_pool(x)
    logits_f2t = tc.matmul(tc.matmul(x_f, p.q_f), tc.transpose(tc.matmul(x_t, p.k_t)))  # F x T
    logits_t2f = tc.matmul(tc.matmul(x_t, p.q_t), tc.transpose(tc.matmul(x_f, p.k_f)))  # T x F
    w_f2t = tc.softmax_axis(logits_f2t, -1)
    w_t2f = tc.softmax_axis(logits_t2f, -1)
    fused = tc.add(w_f2t, tc.transpose(w_t2f))
    return apply_fused(x, p.v, fused), {"f2t": w_f2t, "t2f": w_t2f, "fused_self": fused}


def multi_tfca(x, c, p: MultiTFCAParams) -> tuple[Tensor, dict[str, Tensor]]:
    """Condition-queried attention; ``c`` is N_cond×C_c (batched: B×N_cond×C_c)."""
    x, c = tc.as_tensor(x), tc.as_tensor(c)
    c_x = x.shape[-1]
    if c.shape[-1] != p.q_f.shape[0]:
        raise DimensionError(f"condition has {c.shape[-1]} channels, params expect {p.q_f.shape[0]}")
    if p.k_f.shape[0] != c_x or p.v.shape != (c_x, c_x):
        raise DimensionError(f"multi TF-CA params expect {p.k_f.shape[0]} channels, input has shape {x.shape}")
    if c.shape[-2] < 1:
        raise DimensionError("need at least one condition row")
    x_f, x_t = axis_pool(x)
    logits_c2f = tc.matmul(tc.matmul(c, p.q_f), tc.transpose(tc.matmul(x_f, p.k_f)))  # N x F
    logits_c2t = tc.matmul(tc.matmul(c, p.q_t), tc.transpose(tc.matmul(x_t, p.k_t)))  # N x T
    w_c2f = tc.softmax_axis(logits_c2f, -1)
    w_c2t = tc.softmax_axis(logits_c2t, -1)
    fused = tc.matmul(tc.transpose(w_c2f), w_c2t)  # F x T
    return apply_fused(x, p.v, fused), {"c2f": w_c2f, "c2t": w_c2t, "fused_multi": fused}
