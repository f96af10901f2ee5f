"""Adversarial hinge losses and the four contrastive objectives.

All contrastive losses are InfoNCE-shaped: ``-mean_i log softmax(logits_i)[pos_i]``.
Callers pass unit-normalized embeddings (see :func:`compose_d_losses`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tc
from .tensor import DimensionError, Tensor

D_TERMS = ("adv", "g2s", "l2w", "occ")
G_TERMS = ("adv", "g2s", "l2w", "f2r", "occ")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value: float, step: int | None = None, phase: str | None = None):
        self.term, self.value, self.step, self.phase = term, value, step, phase
        where = f" at step {step}" if step is not None else ""
        side = f" ({phase} update)" if phase else ""
        super().__init__(f"loss term {term!r} is {value}{where}{side}")


@dataclass
class ContrastiveConfig:
    tau: float = 0.1
    gamma1: float = 5.0
    gamma2: float = 5.0
    gamma3: float = 50.0
    w_g2s: float = 1.0
    w_l2w: float = 1.0
    w_f2r: float = 1.0
    w_occ: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if min(self.gamma1, self.gamma2, self.gamma3) <= 0:
            raise ValueError("gammas must be positive")

    def weight(self, term: str) -> float:
        return getattr(self, f"w_{term}")


def _diag_mask(n: int) -> np.ndarray:
    return np.eye(n, dtype=tc.default_dtype())


def _info_nce(logits: Tensor) -> Tensor:
    """-mean_i log softmax(logits[i])[i] for a square logit matrix."""
    n = logits.shape[0]
    logp = tc.log_softmax(logits, axis=1)
    return tc.neg(tc.mean_axis(tc.sum_axis(tc.mul(logp, _diag_mask(n)), 1)))


def hinge_d(real_logits, fake_logits) -> Tensor:
    """mean(max(0, 1 - real)) + mean(max(0, 1 + fake))."""
    real_logits, fake_logits = tc.as_tensor(real_logits), tc.as_tensor(fake_logits)
    return tc.add(tc.mean_axis(tc.relu(tc.sub(1.0, real_logits))),
                  tc.mean_axis(tc.relu(tc.add(1.0, fake_logits))))


def hinge_g(fake_logits) -> Tensor:
    return tc.neg(tc.mean_axis(tc.as_tensor(fake_logits)))


def g2s_loss(g, s, tau: float = 0.1) -> Tensor:
    """Global-audio to sentence InfoNCE; negatives are the other sentences."""
    g, s = tc.as_tensor(g), tc.as_tensor(s)
    if g.shape != s.shape:
        raise DimensionError(f"g {g.shape} and s {s.shape} must match")
    if g.shape[0] < 2:
        raise ValueError("g2s_loss needs at least two pairs")
    return _info_nce(tc.mul(tc.matmul(g, tc.transpose(s)), 1.0 / tau))


def f2r_loss(g_fake, g_real, tau: float = 0.1) -> Tensor:
    """Fake-to-real InfoNCE, averaged over the batch.

    Real features are detached here; keeping the discriminator's parameters
    out of the graph is the caller's job (see ``models.frozen``).
    """
    g_fake, g_real = tc.as_tensor(g_fake), tc.as_tensor(g_real).detach()
    if g_fake.shape != g_real.shape:
        raise DimensionError(f"g_fake {g_fake.shape} and g_real {g_real.shape} must match")
    if g_fake.shape[0] < 2:
        raise ValueError("f2r_loss needs at least two pairs")
    return _info_nce(tc.mul(tc.matmul(g_fake, tc.transpose(g_real)), 1.0 / tau))


def occ_loss(g, s, tau: float = 0.1) -> Tensor:
    """Positive is the own sentence, negatives are the other samples' features."""
    g, s = tc.as_tensor(g), tc.as_tensor(s)
    if g.shape != s.shape:
        raise DimensionError(f"g {g.shape} and s {s.shape} must match")
    n = g.shape[0]
    eye = _diag_mask(n)
    pos = tc.mul(tc.sum_axis(tc.mul(g, s), 1), 1.0 / tau)                    # N
    among = tc.mul(tc.matmul(g, tc.transpose(g)), 1.0 / tau)                 # N x N
    logits = tc.add(tc.mul(among, 1.0 - eye), tc.mul(tc.reshape(pos, (n, 1)), eye))
    return tc.neg(tc.mean_axis(tc.sub(pos, tc.logsumexp(logits, axis=1))))


def l2w_attention(w, l, gamma1: float = 5.0) -> tuple[Tensor, Tensor]:
    """Word-to-region soft attention.

    ``w`` is T_w×C, ``l`` is R×C or B×R×C. Returns alpha (…×T_w×R, rows sum to
    one) and the word contexts c (…×T_w×C).
    """
    w, l = tc.as_tensor(w), tc.as_tensor(l)
    if w.shape[-1] != l.shape[-1]:
        raise DimensionError(f"word features {w.shape} and local features {l.shape} differ in channels")
    sims = tc.matmul(w, tc.transpose(l))                      # ... x T_w x R
    alpha = tc.softmax_axis(tc.mul(sims, gamma1), -1)
    return alpha, tc.matmul(alpha, l)


def l2w_score(w, c, gamma2: float = 5.0) -> Tensor:
    """(1/gamma2) * log sum_t exp(gamma2 * w_t . c_t), over the last word axis."""
    w, c = tc.as_tensor(w), tc.as_tensor(c)
    if w.shape[-2:] != c.shape[-2:]:
        raise DimensionError(f"word features {w.shape} and contexts {c.shape} differ")
    sims = tc.sum_axis(tc.mul(w, c), -1)
    return tc.mul(tc.logsumexp(tc.mul(sims, gamma2), axis=-1), 1.0 / gamma2)


def l2w_scores(l, words: Sequence[Tensor], gamma1: float = 5.0, gamma2: float = 5.0) -> Tensor:
    """N×N matrix S[i, k] = score(local features of i, words of caption k)."""
    l = tc.as_tensor(l)
    cols = []
    for w in words:
        _, c = l2w_attention(w, l, gamma1)                     # N x T_k x C
        cols.append(l2w_score(w, c, gamma2))                   # N
    return tc.stack(cols, axis=1)


def l2w_loss(l, words: Sequence[Tensor], gamma1: float = 5.0, gamma2: float = 5.0,
             gamma3: float = 50.0) -> Tensor:
    """Local-to-word InfoNCE over scores sharpened by gamma3."""
    l = tc.as_tensor(l)
    if l.shape[0] != len(words):
        raise DimensionError(f"{l.shape[0]} local feature sets but {len(words)} captions")
    scores = l2w_scores(l, [tc.as_tensor(w) for w in words], gamma1, gamma2)
    return _info_nce(tc.mul(scores, gamma3))


# ------------------------------------------------------------------ wiring


@dataclass
class Embeddings:
    """Unit-normalized contrastive embeddings from one discriminator pass."""

    g: Tensor                 # N x E
    s: Tensor                 # N x E
    l: Tensor                 # N x R x E
    w: list[Tensor]           # per caption: T_w x E


@dataclass
class LossReport:
    phase: str
    terms: dict[str, float | None] = field(default_factory=dict)
    total: float = 0.0

    def active_terms(self) -> list[str]:
        return [k for k, v in self.terms.items() if v is not None]

    def log_record(self, step: int) -> dict:
        rec = {"step": step, "phase": self.phase, "d_total": None, "g_total": None,
               "adv_d": None, "adv_g": None, "g2s": None, "l2w": None, "f2r": None, "occ": None}
        rec[f"{self.phase}_total"] = self.total
        rec[f"adv_{self.phase}"] = self.terms.get("adv")
        for k in ("g2s", "l2w", "f2r", "occ"):
            rec[k] = self.terms.get(k)
        return rec


def _finite(term: str, t: Tensor, phase: str) -> Tensor:
    val = float(t.data)
    if not math.isfinite(val):
        raise NonFiniteLossError(term, val, phase=phase)
    return t


def _weighted_total(phase: str, terms: dict[str, Tensor | None], cfg: ContrastiveConfig):
    total = None
    report = LossReport(phase)
    for name, t in terms.items():
        if t is None:
            report.terms[name] = None
            continue
        _finite(name, t, phase)
        w = 1.0 if name == "adv" else cfg.weight(name)
        contrib = t if w == 1.0 else tc.mul(t, w)
        total = contrib if total is None else tc.add(total, contrib)
        report.terms[name] = float(t.data)
    report.total = float(total.data)
    return total, report


def compose_d_losses(real_logits, fake_logits, real: Embeddings,
                     cfg: ContrastiveConfig) -> tuple[Tensor, LossReport]:
    """Discriminator objective: hinge + G2S + L2W + OCC on real samples."""
    if real is None:
        raise ValueError("real-sample embeddings are required")
    on = lambda k: cfg.weight(k) > 0
    terms = {
        "adv": hinge_d(real_logits, fake_logits),
        "g2s": g2s_loss(real.g, real.s, cfg.tau) if on("g2s") else None,
        "l2w": l2w_loss(real.l, real.w, cfg.gamma1, cfg.gamma2, cfg.gamma3) if on("l2w") else None,
        "occ": occ_loss(real.g, real.s, cfg.tau) if on("occ") else None,
    }
    return _weighted_total("d", terms, cfg)


def compose_g_losses(fake_logits, fake: Embeddings, real_g,
                     cfg: ContrastiveConfig) -> tuple[Tensor, LossReport]:
    """Generator objective: hinge + G2S + L2W + F2R + OCC on generated samples."""
    if fake is None or (cfg.w_f2r > 0 and real_g is None):
        raise ValueError("generated-sample embeddings and real global features are required")
    on = lambda k: cfg.weight(k) > 0
    terms = {
        "adv": hinge_g(fake_logits),
        "g2s": g2s_loss(fake.g, fake.s, cfg.tau) if on("g2s") else None,
        "l2w": l2w_loss(fake.l, fake.w, cfg.gamma1, cfg.gamma2, cfg.gamma3) if on("l2w") else None,
        "f2r": f2r_loss(fake.g, real_g, cfg.tau) if on("f2r") else None,
        "occ": occ_loss(fake.g, fake.s, cfg.tau) if on("occ") else None,
    }
    return _weighted_total("g", terms, cfg)
