"""Alternating hinge-GAN training with two-time-scale Adam.

Each :func:`train_step` runs ``d_steps_per_g`` discriminator updates (fresh
noise each, generator frozen) and then one generator update (discriminator
frozen). Batches and noise are derived from ``(seed, step)`` so a run resumed
from a checkpoint continues exactly as an uninterrupted one would.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import CorpusConfig, PairBatch, TextCond, alignment_energy, encode_text, sample_batch
from .losses import ContrastiveConfig, LossReport, NonFiniteLossError, compose_d_losses, compose_g_losses
from .models import (CondTensors, Discriminator, Generator, ModelConfig, assign, frozen, load_tensors,
                     save_tensors)
from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    d_steps_per_g: int = 2
    batch_size: int = 8
    total_g_steps: int = 500
    seed: int = 0
    noise_level: float = 0.05
    n_probes: int = 32
    checkpoint_interval: int = 100
    corpus: str | None = None
    checkpoint_dir: str | None = None
    log_path: str | None = None
    metrics_path: str | None = None
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.contrastive, dict):
            self.contrastive = ContrastiveConfig(**self.contrastive)
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        # zero is allowed so a step can be run as a pure no-op
        if self.lr_g < 0 or self.lr_d < 0:
            raise ValueError("learning rates must be non-negative")
        if self.d_steps_per_g < 1:
            raise ValueError("d_steps_per_g must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; missing gradients count as zero."""
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        dt = p.data.dtype
        m = (beta1 * state.m[name] + (1.0 - beta1) * g).astype(dt)
        v = (beta2 * state.v[name] + (1.0 - beta2) * g * g).astype(dt)
        state.m[name], state.v[name] = m, v
        p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(dt)


# ------------------------------------------------------------------ state


@dataclass
class TrainState:
    G: Generator
    D: Discriminator
    adam_g: AdamState
    adam_d: AdamState
    d_steps: int = 0
    g_steps: int = 0

    @classmethod
    def fresh(cls, model_cfg: ModelConfig) -> "TrainState":
        G, D = Generator(model_cfg), Discriminator(model_cfg)
        return cls(G, D, AdamState.zeros(G.named_parameters()), AdamState.zeros(D.named_parameters()))

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, net, opt in (("g", self.G, self.adam_g), ("d", self.D, self.adam_d)):
            for name, p in net.named_parameters().items():
                out[f"{prefix}.{name}"] = p.data
            for name in net.named_parameters():
                out[f"adam_{prefix}.m.{name}"] = opt.m[name]
                out[f"adam_{prefix}.v.{name}"] = opt.v[name]
        return out

    def save(self, directory, extra: dict | None = None) -> None:
        manifest = {"config_hash": self.G.cfg.digest(), "step": self.g_steps, "g_steps": self.g_steps,
                    "d_steps": self.d_steps, "adam_t": [self.adam_g.t, self.adam_d.t],
                    "model": self.G.cfg.to_dict()}
        manifest.update(extra or {})
        save_tensors(directory, self.tensors(), manifest)

    @classmethod
    def load(cls, directory) -> tuple["TrainState", dict]:
        manifest, tensors = load_tensors(directory)
        cfg = ModelConfig.from_dict(manifest["model"])
        if cfg.digest() != manifest["config_hash"]:
            raise ValueError(f"checkpoint {directory}: config hash mismatch")
        state = cls.fresh(cfg)
        assign(state.G.named_parameters(), tensors, "g.")
        assign(state.D.named_parameters(), tensors, "d.")
        for prefix, net, opt in (("g", state.G, state.adam_g), ("d", state.D, state.adam_d)):
            for name in net.named_parameters():
                opt.m[name] = tensors[f"adam_{prefix}.m.{name}"]
                opt.v[name] = tensors[f"adam_{prefix}.v.{name}"]
        state.adam_g.t, state.adam_d.t = manifest["adam_t"]
        state.d_steps, state.g_steps = manifest["d_steps"], manifest["g_steps"]
        return state, manifest


# -------------------------------------------------------------- stepping


def _step_rng(seed: int, step: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, k])


def _batch_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step, 9_999]).generate_state(1)[0])


def _named_grads(params: dict[str, Tensor], grads: dict[Tensor, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: grads[p] for name, p in params.items() if p in grads}


def d_update(state: TrainState, batch: PairBatch, conds: CondTensors, cfg: TrainConfig,
             z: np.ndarray) -> LossReport:
    fake = state.G.forward(Tensor(z), conds).data      # no tape: generator is a constant here
    d_params = state.D.named_parameters()
    with Tape() as tape:
        real = state.D.forward(Tensor(batch.mels), conds)
        fake_out = state.D.forward(Tensor(fake), conds)
        total, report = compose_d_losses(real.logit, fake_out.logit, real.emb, cfg.contrastive)
    grads = tape.backward(total)
    adam_step(d_params, _named_grads(d_params, grads), state.adam_d, cfg.lr_d, cfg.beta1, cfg.beta2,
              cfg.adam_eps)
    state.d_steps += 1
    return report


def g_update(state: TrainState, batch: PairBatch, conds: CondTensors, cfg: TrainConfig,
             z: np.ndarray) -> LossReport:
    g_params = state.G.named_parameters()
    real_g = None
    if cfg.contrastive.w_f2r > 0:
        real_g = state.D.forward(Tensor(batch.mels), conds).emb.g.detach()
    with Tape() as tape:
        fake = state.G.forward(Tensor(z), conds)
        with frozen(state.D.parameters()):
            out = state.D.forward(fake, conds)
        total, report = compose_g_losses(out.logit, out.emb, real_g, cfg.contrastive)
    grads = tape.backward(total)
    adam_step(g_params, _named_grads(g_params, grads), state.adam_g, cfg.lr_g, cfg.beta1, cfg.beta2,
              cfg.adam_eps)
    state.g_steps += 1
    return report


def train_step(state: TrainState, batch: PairBatch, cfg: TrainConfig) -> list[LossReport]:
    """d_steps_per_g discriminator updates then one generator update."""
    step = state.g_steps
    conds = CondTensors.from_conds(batch.conds)
    n, c_z = batch.noises.shape
    reports = []
    phase = "d"
    try:
        for k in range(cfg.d_steps_per_g):
            z = batch.noises if k == 0 else _step_rng(cfg.seed, step, k).standard_normal((n, c_z)).astype(np.float32)
            reports.append(d_update(state, batch, conds, cfg, z))
        phase = "g"
        z = _step_rng(cfg.seed, step, cfg.d_steps_per_g).standard_normal((n, c_z)).astype(np.float32)
        reports.append(g_update(state, batch, conds, cfg, z))
    except NonFiniteLossError as err:
        raise NonFiniteLossError(err.term, err.value, step=step, phase=phase) from None
    return reports


def batch_for_step(corpus: CorpusConfig, cfg: TrainConfig, step: int) -> PairBatch:
    return sample_batch(corpus, cfg.batch_size, _batch_seed(cfg.seed, step), c_c=cfg.model.c_c,
                        c_z=cfg.model.c_z, noise_level=cfg.noise_level)


# ---------------------------------------------------------------- probes


@dataclass
class ProbeSet:
    tokens: list[int]
    conds: list[TextCond]
    z: np.ndarray

    @classmethod
    def build(cls, corpus: CorpusConfig, model_cfg: ModelConfig, n: int = 32, seed: int = 0) -> "ProbeSet":
        """``n`` single-token captions cycling through the vocabulary, fixed noise each."""
        tokens = [i % corpus.vocab_size for i in range(n)]
        conds = [encode_text([t], model_cfg.c_c, corpus.seed, corpus.vocab_size) for t in tokens]
        z = np.random.default_rng([seed, 31_337]).standard_normal((n, model_cfg.c_z)).astype(np.float32)
        return cls(tokens, conds, z)

    def alignment(self, G: Generator, corpus: CorpusConfig) -> float:
        mels = G.forward(Tensor(self.z), CondTensors.from_conds(self.conds)).data
        return float(np.mean([alignment_energy(m, corpus.event(t)) for m, t in zip(mels, self.tokens)]))


# ------------------------------------------------------------------ loop


@dataclass
class TrainResult:
    state: TrainState
    history: list[dict]
    reports: list[LossReport]


def _append_jsonl(path: str | None, records: list[dict]) -> None:
    if not path:
        return
    try:
        with open(path, "a") as fh:
            for r in records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
    except OSError as err:
        raise OSError(f"cannot append to {path}: {err}") from err


def checkpoint_path(cfg: TrainConfig, g_steps: int) -> str:
    return os.path.join(cfg.checkpoint_dir, f"step_{g_steps:06d}")


def train(cfg: TrainConfig, corpus: CorpusConfig | None = None, resume: str | None = None,
          on_step: Callable[[TrainState, list[LossReport]], None] | None = None) -> TrainResult:
    """Run until ``total_g_steps`` generator updates have been made.

    Loss reports go to ``log_path`` (one JSON line per update); probe
    alignment metrics go to ``metrics_path`` at step 0 and every checkpoint.
    """
    if corpus is None:
        if not cfg.corpus or not os.path.exists(cfg.corpus):
            raise FileNotFoundError(f"corpus file not found: {cfg.corpus}")
        corpus = CorpusConfig.load(cfg.corpus)
    if resume:
        state, _ = TrainState.load(resume)
        if state.G.cfg.digest() != cfg.model.digest():
            raise ValueError("checkpoint model geometry differs from the config")
    else:
        state = TrainState.fresh(cfg.model)
        for path in (cfg.log_path, cfg.metrics_path):
            if path and os.path.exists(path):
                os.remove(path)
    if cfg.checkpoint_dir:
        os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    probes = ProbeSet.build(corpus, cfg.model, cfg.n_probes, cfg.seed)
    extra = {"text_seed": corpus.seed, "vocab_size": corpus.vocab_size}
    history: list[dict] = []
    all_reports: list[LossReport] = []

    def checkpoint():
        rec = {"step": state.g_steps, "alignment_energy": probes.alignment(state.G, corpus)}
        history.append(rec)
        _append_jsonl(cfg.metrics_path, [rec])
        if cfg.checkpoint_dir:
            state.save(checkpoint_path(cfg, state.g_steps), extra)
        logger.info("step %d alignment_energy %.5f", state.g_steps, rec["alignment_energy"])

    if not resume:
        checkpoint()
    while state.g_steps < cfg.total_g_steps:
        step = state.g_steps
        reports = train_step(state, batch_for_step(corpus, cfg, step), cfg)
        all_reports.extend(reports)
        _append_jsonl(cfg.log_path, [r.log_record(step) for r in reports])
        if on_step:
            on_step(state, reports)
        if state.g_steps % cfg.checkpoint_interval == 0 or state.g_steps == cfg.total_g_steps:
            checkpoint()
    return TrainResult(state, history, all_reports)
