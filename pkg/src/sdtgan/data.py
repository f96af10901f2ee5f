"""Synthetic text/audio pairs and a frozen stub text encoder.

Each vocabulary token owns one time-frequency rectangle. A caption's
mel-spectrogram is the (clipped) sum of its tokens' rectangles plus noise,
so word-level alignment has a known ground truth.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

MAX_CAPTION_TOKENS = 4


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class SynthEvent:
    token_id: int
    f_lo: int
    f_hi: int
    onset: int
    offset: int
    amplitude: float

    def validate(self, F: int, T: int) -> None:
        if not (0 <= self.f_lo < self.f_hi <= F):
            raise ConfigurationError(f"bad frequency band [{self.f_lo}, {self.f_hi}) for F={F}")
        if not (0 <= self.onset < self.offset <= T):
            raise ConfigurationError(f"bad envelope [{self.onset}, {self.offset}) for T={T}")


@dataclass
class CorpusConfig:
    vocab_size: int = 16
    F: int = 64
    T: int = 64
    seed: int = 0
    events: list[SynthEvent] = field(default_factory=list)

    @classmethod
    def build(cls, vocab_size: int = 16, F: int = 64, T: int = 64, seed: int = 0) -> "CorpusConfig":
        """Assign every token a seeded rectangle and amplitude."""
        if vocab_size < 2:
            raise ConfigurationError(f"vocab_size must be >= 2, got {vocab_size}")
        rng = np.random.default_rng(seed)
        events = []
        for tok in range(vocab_size):
            height = int(rng.integers(max(2, F // 10), max(3, F // 4) + 1))
            width = int(rng.integers(max(2, T // 8), max(3, T // 2) + 1))
            height, width = min(height, F), min(width, T)
            f_lo = int(rng.integers(0, F - height + 1))
            onset = int(rng.integers(0, T - width + 1))
            amp = float(np.round(rng.uniform(0.6, 1.0), 4))
            events.append(SynthEvent(tok, f_lo, f_lo + height, onset, onset + width, amp))
        return cls(vocab_size, F, T, seed, events)

    def event(self, token_id: int) -> SynthEvent:
        return self.events[token_id]

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "F": self.F, "T": self.T, "seed": self.seed,
                "events": [asdict(e) for e in self.events]}

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        cfg = cls(int(d["vocab_size"]), int(d["F"]), int(d["T"]), int(d["seed"]),
                  [SynthEvent(**e) for e in d["events"]])
        if len(cfg.events) != cfg.vocab_size:
            raise ConfigurationError("corpus must define exactly one event per token")
        for e in cfg.events:
            e.validate(cfg.F, cfg.T)
        return cfg

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "CorpusConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class TextCond:
    words: np.ndarray      # T_words x C_c, unit rows
    sentence: np.ndarray   # C_c, unit norm
    token_ids: tuple[int, ...]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def word_vector(token_id: int, c_c: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, token_id])
    return _unit(rng.standard_normal(c_c))


def encode_text(token_ids: Sequence[int], c_c: int = 64, seed: int = 0,
                vocab_size: int | None = None) -> TextCond:
    """Frozen stand-in for a pretrained text encoder.

    Word rows are hash-seeded Gaussian vectors, normalized; the sentence is the
    normalized mean of the word rows. Computation is in float64 and rounded to
    float32 once so results do not depend on summation order.
    """
    ids = tuple(int(t) for t in token_ids)
    if not ids:
        raise ConfigurationError("caption must contain at least one token")
    for t in ids:
        if t < 0 or (vocab_size is not None and t >= vocab_size):
            raise ConfigurationError(f"token {t} outside vocabulary of size {vocab_size}")
    words = np.stack([word_vector(t, c_c, seed) for t in ids])
    sentence = _unit(words.mean(axis=0))
    return TextCond(words.astype(np.float32), sentence.astype(np.float32), ids)


def _edge_profile(lo: int, hi: int, n: int) -> np.ndarray:
    prof = np.zeros(n)
    prof[lo:hi] = 1.0
    if hi - lo >= 3:
        prof[lo] = prof[hi - 1] = 0.5
    return prof


def event_mask(event: SynthEvent, F: int, T: int) -> np.ndarray:
    """Boolean F×T mask of the event rectangle."""
    m = np.zeros((F, T), dtype=bool)
    m[event.f_lo:event.f_hi, event.onset:event.offset] = True
    return m


def render_mel(events: Sequence[SynthEvent], F: int, T: int, noise_level: float = 0.0,
               seed: int = 0) -> np.ndarray:
    """Render events onto an F×T×1 grid in [0, 1].

    Each rectangle is an outer product of per-axis profiles whose first and
    last cells are halved (soft edges); the interior carries the full
    amplitude and everything outside is exactly zero before noise.
    """
    mel = np.zeros((F, T))
    for e in events:
        e.validate(F, T)
        mel += e.amplitude * np.outer(_edge_profile(e.f_lo, e.f_hi, F), _edge_profile(e.onset, e.offset, T))
    if noise_level > 0:
        mel += noise_level * np.random.default_rng(seed).standard_normal((F, T))
    return np.clip(mel, 0.0, 1.0).astype(np.float32)[:, :, None]


def alignment_energy(mel: np.ndarray, event: SynthEvent) -> float:
    """Mean energy inside the token's rectangle minus mean energy outside it."""
    grid = np.asarray(mel, dtype=np.float64).reshape(mel.shape[0], mel.shape[1], -1).mean(axis=-1)
    mask = event_mask(event, grid.shape[0], grid.shape[1])
    outside = grid[~mask]
    return float(grid[mask].mean() - (outside.mean() if outside.size else 0.0))


@dataclass
class PairBatch:
    mels: np.ndarray            # N x F x T x 1
    conds: list[TextCond]
    noises: np.ndarray          # N x C_z

    def __len__(self) -> int:
        return len(self.conds)


def sample_captions(vocab_size: int, n: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    caps = []
    for _ in range(n):
        k = int(rng.integers(1, min(MAX_CAPTION_TOKENS, vocab_size) + 1))
        caps.append(tuple(int(t) for t in rng.choice(vocab_size, size=k, replace=False)))
    return caps


def sample_noise(n: int, c_z: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, c_z)).astype(np.float32)


def sample_batch(corpus: CorpusConfig, n: int, seed: int, *, c_c: int = 64, c_z: int = 32,
                 noise_level: float = 0.05, text_seed: int | None = None) -> PairBatch:
    """Draw ``n`` caption/mel pairs plus noise vectors, reproducibly from ``seed``.

    ``text_seed`` selects the stub encoder's hash seed (defaults to the corpus seed).
    """
    if n < 2:
        raise ConfigurationError(f"batch size must be >= 2 for contrastive losses, got {n}")
    rng = np.random.default_rng(seed)
    text_seed = corpus.seed if text_seed is None else text_seed
    caps = sample_captions(corpus.vocab_size, n, rng)
    mel_seeds = rng.integers(0, 2**31, size=n)
    mels = np.stack([
        render_mel([corpus.event(t) for t in cap], corpus.F, corpus.T, noise_level, int(s))
        for cap, s in zip(caps, mel_seeds)
    ])
    conds = [encode_text(cap, c_c, text_seed, corpus.vocab_size) for cap in caps]
    return PairBatch(mels, conds, sample_noise(n, c_z, rng))
