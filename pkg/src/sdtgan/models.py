"""Generator and discriminator built from Single-Double-Triple attention stages.

The generator goes from a low-resolution stem to full resolution with stage
attention sets {self, word, sentence} -> {word, sentence} -> {sentence}; the
discriminator mirrors it, going from {sentence} at high resolution to
{self, word, sentence}. Inside a stage the blocks always run in the order
sentence -> word -> self.

Grids are channels-last with a leading batch axis: N×F×T×C.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import tensor as tc
from . import tsr
from .attention import MultiTFCAParams, SelfTFCAParams, multi_tfca, self_tfca
from .data import TextCond
from .losses import Embeddings
from .tensor import DimensionError, Tensor

ATTENTION_ORDER = ("sentence", "word", "self")
G_ATTENTION = (("self", "word", "sentence"), ("word", "sentence"), ("sentence",))
D_ATTENTION = (("sentence",), ("word", "sentence"), ("self", "word", "sentence"))


@dataclass
class ModelConfig:
    F: int = 64
    T: int = 64
    c_c: int = 64
    c_z: int = 32
    g_stem_channels: int = 32
    g_channels: tuple[int, ...] = (32, 16, 8)
    d_channels: tuple[int, ...] = (16, 32, 64)
    c_g: int = 64
    c_embed: int = 64
    kernel: int = 3
    # Initial generator output logit; sigmoid(-2.2) ~ 0.1, the corpus mean level.
    g_out_bias: float = -2.2
    # Stem multiplies s by sqrt(c_c) so text and noise coordinates both have unit scale.
    stem_text_gain: bool = True
    # Forces every stage of both networks to one attention set (ablation).
    attention_override: tuple[str, ...] | None = None
    init_seed: int = 0

    def __post_init__(self):
        self.g_channels = tuple(self.g_channels)
        self.d_channels = tuple(self.d_channels)
        if self.attention_override is not None:
            self.attention_override = tuple(self.attention_override)
        if len(self.g_channels) != len(self.d_channels):
            raise ValueError("generator and discriminator need the same number of stages")
        scale = 2 ** len(self.g_channels)
        if self.F % scale or self.T % scale:
            raise ValueError(f"F and T must be divisible by {scale}")

    @property
    def n_stages(self) -> int:
        return len(self.g_channels)

    def g_attention(self) -> list[tuple[str, ...]]:
        if self.attention_override is not None:
            return [self.attention_override] * self.n_stages
        return list(G_ATTENTION[: self.n_stages]) if self.n_stages == 3 else _sdt_sets(self.n_stages, True)

    def d_attention(self) -> list[tuple[str, ...]]:
        if self.attention_override is not None:
            return [self.attention_override] * self.n_stages
        return list(D_ATTENTION) if self.n_stages == 3 else _sdt_sets(self.n_stages, False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["g_channels"] = list(self.g_channels)
        d["d_channels"] = list(self.d_channels)
        d["attention_override"] = list(self.attention_override) if self.attention_override else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _sdt_sets(n: int, generator: bool) -> list[tuple[str, ...]]:
    # stage counts other than three: triple first, single last, double between
    sets = [G_ATTENTION[0]] + [G_ATTENTION[1]] * max(n - 2, 0) + ([G_ATTENTION[2]] if n > 1 else [])
    return sets if generator else sets[::-1]


@dataclass
class StageSpec:
    resolution: tuple[int, int]
    channels: int
    attention_set: tuple[str, ...]


class Stage:
    """conv (stride-2 down or x2 nearest up) -> activation -> attention blocks."""

    def __init__(self, spec: StageSpec, prev_channels: int, c_c: int, rng: np.random.Generator,
                 mode: str, kernel: int = 3, allow_empty: bool = False):
        unknown = set(spec.attention_set) - set(ATTENTION_ORDER)
        if unknown:
            raise ValueError(f"invalid attention name(s): {sorted(unknown)}")
        if not spec.attention_set and not allow_empty:
            raise ValueError("attention_set must be non-empty")
        if mode not in ("up", "down"):
            raise ValueError(f"mode must be 'up' or 'down', got {mode!r}")
        self.spec = spec
        self.mode = mode
        fan_in = kernel * kernel * prev_channels
        self.conv_w = Tensor(rng.standard_normal((kernel, kernel, prev_channels, spec.channels))
                             * np.sqrt(2.0 / fan_in), requires_grad=True)
        self.conv_b = Tensor(np.zeros(spec.channels), requires_grad=True)
        self.blocks: list[tuple[str, SelfTFCAParams | MultiTFCAParams]] = []
        for name in ATTENTION_ORDER:
            if name not in spec.attention_set:
                continue
            if name == "self":
                self.blocks.append((name, SelfTFCAParams.init(spec.channels, rng)))
            else:
                self.blocks.append((name, MultiTFCAParams.init(spec.channels, c_c, rng)))

    @property
    def block_names(self) -> list[str]:
        return [n for n, _ in self.blocks]

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"conv.w": self.conv_w, "conv.b": self.conv_b}
        for name, p in self.blocks:
            for k, t in p.named().items():
                out[f"{name}.{k}"] = t
        return out

    def __call__(self, h: Tensor, conds: "CondTensors", maps: dict | None = None,
                 prefix: str = "") -> Tensor:
        if self.mode == "up":
            h = tc.upsample_nearest(h, 2)
            h = tc.relu(tc.add(tc.conv2d(h, self.conv_w, 1), self.conv_b))
        else:
            h = tc.leaky_relu(tc.add(tc.conv2d(h, self.conv_w, 2), self.conv_b), 0.2)
        for name, p in self.blocks:
            if name == "self":
                h, m = self_tfca(h, p)
            elif name == "sentence":
                h, m = multi_tfca(h, conds.sentence, p)
            else:
                h, m = _word_attention(h, conds, p)
            if maps is not None:
                maps[f"{prefix}{name}"] = m
        return h


def build_stage(spec: StageSpec, prev_channels: int, c_c: int = 64, rng=None, mode: str = "up",
                kernel: int = 3, allow_empty: bool = False) -> Stage:
    rng = rng if rng is not None else np.random.default_rng(0)
    return Stage(spec, prev_channels, c_c, rng, mode, kernel, allow_empty)


@dataclass
class CondTensors:
    """Batched text features: sentence N×1×C_c and per-sample word matrices."""

    sentence: Tensor
    words: list[Tensor]
    groups: list[np.ndarray] = field(default_factory=list)
    inverse: np.ndarray | None = None

    @classmethod
    def from_conds(cls, conds: Sequence[TextCond]) -> "CondTensors":
        sent = Tensor(np.stack([c.sentence for c in conds])[:, None, :])
        words = [Tensor(c.words) for c in conds]
        lengths = np.array([len(c.token_ids) for c in conds])
        groups = [np.flatnonzero(lengths == k) for k in np.unique(lengths)]
        order = np.concatenate(groups)
        inverse = np.empty_like(order)
        inverse[order] = np.arange(len(order))
        return cls(sent, words, groups, inverse)

    def __len__(self) -> int:
        return len(self.words)


def _word_attention(h: Tensor, conds: CondTensors, p: MultiTFCAParams):
    """Multi TF-CA with each sample's word matrix as its conditions.

    Samples are grouped by caption length so each group runs batched; the
    fused maps are reassembled in the original sample order.
    """
    if len(conds.groups) == 1:
        c = tc.stack([conds.words[i] for i in conds.groups[0]], axis=0)
        return multi_tfca(h, c, p)
    outs, fused, c2f, c2t = [], [], [], []
    for idx in conds.groups:
        c = tc.stack([conds.words[i] for i in idx], axis=0)
        o, m = multi_tfca(tc.take(h, idx, 0), c, p)
        outs.append(o)
        fused.append(m["fused_multi"])
        c2f.extend(m["c2f"].data)
        c2t.extend(m["c2t"].data)
    out = tc.take(tc.concat(outs, 0), conds.inverse, 0)
    # c2f/c2t rows differ in length between groups, so they come back as per-sample arrays
    return out, {"c2f": [c2f[j] for j in conds.inverse], "c2t": [c2t[j] for j in conds.inverse],
                 "fused_multi": tc.take(tc.concat(fused, 0), conds.inverse, 0)}


class Network:
    def named_parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


def _linear_init(rng, fan_in, fan_out, gain=1.0):
    return Tensor(rng.standard_normal((fan_in, fan_out)) * gain / np.sqrt(fan_in), requires_grad=True)


class Generator(Network):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng([cfg.init_seed, 1])
        self.cfg = cfg
        scale = 2 ** cfg.n_stages
        self.base = (cfg.F // scale, cfg.T // scale)
        stem_out = self.base[0] * self.base[1] * cfg.g_stem_channels
        self.stem_w = _linear_init(rng, cfg.c_z + cfg.c_c, stem_out, np.sqrt(2.0))
        self.stem_b = Tensor(np.zeros(stem_out), requires_grad=True)
        self.stages: list[Stage] = []
        prev = cfg.g_stem_channels
        res = self.base
        for ch, attn in zip(cfg.g_channels, cfg.g_attention()):
            res = (res[0] * 2, res[1] * 2)
            self.stages.append(Stage(StageSpec(res, ch, attn), prev, cfg.c_c, rng, "up", cfg.kernel))
            prev = ch
        k = cfg.kernel
        self.head_w = Tensor(rng.standard_normal((k, k, prev, 1)) / np.sqrt(k * k * prev), requires_grad=True)
        self.head_b = Tensor(np.full(1, cfg.g_out_bias), requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"stem.w": self.stem_w, "stem.b": self.stem_b}
        for i, st in enumerate(self.stages):
            out.update({f"stage{i}.{k}": v for k, v in st.named_parameters().items()})
        out.update({"head.w": self.head_w, "head.b": self.head_b})
        return out

    def forward(self, z, conds: CondTensors, maps: dict | None = None) -> Tensor:
        z = tc.as_tensor(z)
        n = z.shape[0]
        if z.shape[1] != self.cfg.c_z or len(conds) != n:
            raise DimensionError(f"noise {z.shape} does not match c_z={self.cfg.c_z} and {len(conds)} captions")
        s = tc.reshape(conds.sentence, (n, self.cfg.c_c))
        if self.cfg.stem_text_gain:
            s = tc.mul(s, float(np.sqrt(self.cfg.c_c)))
        h = tc.add(tc.matmul(tc.concat([z, s], 1), self.stem_w), self.stem_b)
        h = tc.reshape(tc.relu(h), (n, self.base[0], self.base[1], self.cfg.g_stem_channels))
        for i, st in enumerate(self.stages):
            h = st(h, conds, maps, prefix=f"g{i}_")
        return tc.sigmoid(tc.add(tc.conv2d(h, self.head_w, 1), self.head_b))


@dataclass
class DiscOutput:
    logit: Tensor        # N
    local: Tensor        # N x R x C_l (D1 output, flattened positions)
    global_: Tensor      # N x C_g
    emb: Embeddings


class Discriminator(Network):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng([cfg.init_seed, 2])
        self.cfg = cfg
        self.stages: list[Stage] = []
        prev = 1
        res = (cfg.F, cfg.T)
        for ch, attn in zip(cfg.d_channels, cfg.d_attention()):
            res = (res[0] // 2, res[1] // 2)
            self.stages.append(Stage(StageSpec(res, ch, attn), prev, cfg.c_c, rng, "down", cfg.kernel))
            prev = ch
        e = cfg.c_embed
        self.g_w = _linear_init(rng, prev, cfg.c_g)
        self.g_b = Tensor(np.zeros(cfg.c_g), requires_grad=True)
        self.s_proj = _linear_init(rng, cfg.c_c, cfg.c_g)
        self.out_w = _linear_init(rng, 2 * cfg.c_g, 1)
        self.out_b = Tensor(np.zeros(1), requires_grad=True)
        self.head_g = _linear_init(rng, cfg.c_g, e)
        self.head_s = _linear_init(rng, cfg.c_c, e)
        self.head_l = _linear_init(rng, cfg.d_channels[0], e)
        self.head_w = _linear_init(rng, cfg.c_c, e)

    @property
    def local_resolution(self) -> tuple[int, int]:
        return self.stages[0].spec.resolution

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, st in enumerate(self.stages):
            out.update({f"stage{i}.{k}": v for k, v in st.named_parameters().items()})
        out.update({"global.w": self.g_w, "global.b": self.g_b, "d3.s_proj": self.s_proj,
                    "d3.w": self.out_w, "d3.b": self.out_b, "head.g": self.head_g,
                    "head.s": self.head_s, "head.l": self.head_l, "head.w": self.head_w})
        return out

    def forward(self, mel, conds: CondTensors, maps: dict | None = None) -> DiscOutput:
        mel = tc.as_tensor(mel)
        cfg = self.cfg
        if mel.ndim != 4 or mel.shape[1:] != (cfg.F, cfg.T, 1):
            raise DimensionError(f"expected N×{cfg.F}×{cfg.T}×1 mels, got {mel.shape}")
        n = mel.shape[0]
        # D1: local features
        h = self.stages[0](mel, conds, maps, prefix="d0_")
        local = tc.reshape(h, (n, h.shape[1] * h.shape[2], h.shape[3]))
        # D2: global feature
        for i, st in enumerate(self.stages[1:], start=1):
            h = st(h, conds, maps, prefix=f"d{i}_")
        pooled = tc.mean_axis(h, (1, 2))
        g = tc.add(tc.matmul(pooled, self.g_w), self.g_b)
        # D3: conditional logit
        s = tc.reshape(conds.sentence, (n, cfg.c_c))
        joint = tc.concat([tc.leaky_relu(g, 0.2), tc.matmul(s, self.s_proj)], 1)
        logit = tc.reshape(tc.add(tc.matmul(joint, self.out_w), self.out_b), (n,))
        emb = Embeddings(
            g=tc.l2_normalize(tc.matmul(g, self.head_g), -1),
            s=tc.l2_normalize(tc.matmul(s, self.head_s), -1),
            l=tc.l2_normalize(tc.matmul(local, self.head_l), -1),
            w=[tc.l2_normalize(tc.matmul(w, self.head_w), -1) for w in conds.words],
        )
        return DiscOutput(logit, local, g, emb)


def generate(z, conds, G: Generator, maps: dict | None = None) -> Tensor:
    """One forward pass from noise and text features to N×F×T×1 mels in (0, 1)."""
    if not isinstance(conds, CondTensors):
        conds = CondTensors.from_conds(conds)
    z = np.asarray(getattr(z, "data", z))
    if z.ndim == 1:
        z = z[None]
    return G.forward(Tensor(z) if not isinstance(z, Tensor) else z, conds, maps)


def discriminate(mel, conds, D: Discriminator, maps: dict | None = None) -> DiscOutput:
    if not isinstance(conds, CondTensors):
        conds = CondTensors.from_conds(conds)
    mel = tc.as_tensor(mel)
    if mel.ndim == 3:
        mel = tc.reshape(mel, (1,) + mel.shape)
    return D.forward(mel, conds, maps)


@contextlib.contextmanager
def frozen(params: Iterable[Tensor]):
    """Treat ``params`` as constants for any graph recorded inside the block."""
    params = list(params)
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, r in zip(params, saved):
            p.requires_grad = r


def count_params(model) -> int:
    if isinstance(model, Tensor):
        return model.size
    if isinstance(model, (list, tuple)):
        return sum(count_params(m) for m in model)
    if isinstance(model, dict):
        return sum(t.size for t in model.values())
    return sum(t.size for t in model.parameters())


# ------------------------------------------------------------- checkpoints


MANIFEST = "manifest.json"


def _fname(name: str) -> str:
    return name.replace("/", "__") + ".tsr"


def save_tensors(directory: str | os.PathLike, tensors: dict[str, np.ndarray], manifest: dict) -> None:
    """Write one TSR per named tensor plus a manifest listing them in order."""
    os.makedirs(directory, exist_ok=True)
    for name, arr in tensors.items():
        tsr.save(os.path.join(directory, _fname(name)), arr)
    body = dict(manifest)
    body["parameters"] = list(tensors)
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tensors(directory: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    tensors = {name: tsr.load(os.path.join(directory, _fname(name))) for name in manifest["parameters"]}
    return manifest, tensors


def assign(params: dict[str, Tensor], values: dict[str, np.ndarray], prefix: str = "") -> None:
    for name, t in params.items():
        key = prefix + name
        if key not in values:
            raise KeyError(f"checkpoint is missing parameter {key}")
        arr = values[key]
        if arr.shape != t.shape:
            raise DimensionError(f"parameter {key}: checkpoint shape {arr.shape} != model shape {t.shape}")
        t.data = arr.astype(t.data.dtype)
