"""Registered finite-difference checks, grouped by scope.

Each check builds a scalar function of some parameters from a seed; running
it returns the max relative error between tape gradients and central
differences. Primitive ops are held to 1e-3, composite blocks to 1e-2.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from . import tensor as tc
from .attention import MultiTFCAParams, SelfTFCAParams, multi_tfca, self_tfca
from .data import encode_text
from .gradcheck import finite_diff_check
from .models import CondTensors, Discriminator, Generator, ModelConfig
from .tensor import Tensor

PRIMITIVE_TOL = 1e-3
COMPOSITE_TOL = 1e-2

Builder = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


@dataclass
class Check:
    name: str
    scope: str
    tol: float
    build: Builder
    eps: float = 1e-3

    def run(self, seed: int = 0, analytic_scale: float = 1.0) -> float:
        f, params = self.build(np.random.default_rng([seed, zlib.crc32(self.name.encode())]))
        return finite_diff_check(f, params, self.eps, analytic_scale=analytic_scale)


REGISTRY: dict[str, Check] = {}


def register(name: str, scope: str, tol: float, eps: float = 1e-3):
    def deco(fn: Builder) -> Builder:
        REGISTRY[name] = Check(name, scope, tol, fn, eps)
        return fn
    return deco


def _p(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _weighted_sum(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    # random projection so every output coordinate matters
    w = rng.standard_normal(out.shape)
    return lambda y: tc.sum_axis(tc.mul(y, w))


def _primitive(name: str, fn: Callable, *shapes, positive=False, eps=1e-3):
    def build(rng):
        params = [Tensor(np.abs(rng.standard_normal(s)) + 0.5 if positive else rng.standard_normal(s),
                         requires_grad=True) for s in shapes]
        proj = _weighted_sum(fn(*params), rng)
        return (lambda: proj(fn(*params))), params
    register(name, "tensor", PRIMITIVE_TOL, eps)(build)


_primitive("matmul", tc.matmul, (4, 5), (5, 3))
_primitive("matmul_batched", tc.matmul, (2, 3, 4), (4, 2))
_primitive("add_broadcast", tc.add, (3, 4, 2), (4, 1))
_primitive("sub", tc.sub, (3, 4), (3, 4))
_primitive("mul_broadcast", tc.mul, (4, 5, 3), (4, 5, 1))
_primitive("div", tc.div, (3, 4), (3, 4), positive=True)
_primitive("exp", tc.exp, (3, 4))
_primitive("log", tc.log, (3, 4), positive=True)
_primitive("leaky_relu", lambda x: tc.leaky_relu(x, 0.2), (5, 4))
_primitive("sigmoid", tc.sigmoid, (3, 4))
_primitive("transpose", lambda x: tc.transpose(x, (2, 0, 1)), (2, 3, 4))
_primitive("reshape", lambda x: tc.reshape(x, (6, 4)), (2, 3, 4))
_primitive("concat", lambda a, b: tc.concat([a, b], 1), (2, 3), (2, 4))
_primitive("take", lambda x: tc.take(x, [2, 0, 2], 0), (3, 4))
_primitive("sum_axis", lambda x: tc.sum_axis(x, 1), (3, 4, 2))
_primitive("mean_axis", lambda x: tc.mean_axis(x, 0), (3, 4))
_primitive("softmax_axis", lambda x: tc.softmax_axis(x, 1), (3, 4))
_primitive("logsumexp", lambda x: tc.logsumexp(x, 1), (3, 4))
_primitive("l2_normalize", lambda x: tc.l2_normalize(x, -1), (3, 4))
_primitive("conv2d", lambda x, k: tc.conv2d(x, k, 1), (4, 4, 2), (3, 3, 2, 3))
_primitive("conv2d_stride2", lambda x, k: tc.conv2d(x, k, 2), (2, 5, 4, 2), (3, 3, 2, 2))
_primitive("upsample_nearest", lambda x: tc.upsample_nearest(x, 2), (3, 2, 2))


def _randomize(params) -> list[Tensor]:
    return list(params.named().values())


@register("self_tfca", "attention", COMPOSITE_TOL)
def _self_tfca(rng):
    x = _p(rng, 6, 8, 4)
    p = SelfTFCAParams(*(_p(rng, 4, 4, scale=0.5) for _ in range(4)), _p(rng, 4, 4, scale=0.5))
    proj = _weighted_sum(x, rng)
    return (lambda: proj(self_tfca(x, p)[0])), [x] + _randomize(p)


@register("multi_tfca", "attention", COMPOSITE_TOL)
def _multi_tfca(rng):
    x = _p(rng, 6, 8, 4)
    c = _p(rng, 3, 5)
    p = MultiTFCAParams(_p(rng, 5, 4, scale=0.5), _p(rng, 5, 4, scale=0.5), _p(rng, 4, 4, scale=0.5),
                        _p(rng, 4, 4, scale=0.5), _p(rng, 4, 4, scale=0.5))
    proj = _weighted_sum(x, rng)
    return (lambda: proj(multi_tfca(x, c, p)[0])), [x, c] + _randomize(p)


@register("hinge_d", "losses", COMPOSITE_TOL)
def _hinge_d(rng):
    real, fake = _p(rng, 6), _p(rng, 6)
    return (lambda: L.hinge_d(real, fake)), [real, fake]


@register("hinge_g", "losses", COMPOSITE_TOL)
def _hinge_g(rng):
    fake = _p(rng, 6)
    return (lambda: L.hinge_g(fake)), [fake]


def _unit(t):
    return tc.l2_normalize(t, -1)


@register("g2s_loss", "losses", COMPOSITE_TOL)
def _g2s(rng):
    g, s = _p(rng, 4, 6), _p(rng, 4, 6)
    return (lambda: L.g2s_loss(_unit(g), _unit(s), 0.1)), [g, s]


@register("f2r_loss", "losses", COMPOSITE_TOL)
def _f2r(rng):
    gf, gr = _p(rng, 4, 6), Tensor(rng.standard_normal((4, 6)))
    return (lambda: L.f2r_loss(_unit(gf), _unit(gr), 0.1)), [gf]


@register("occ_loss", "losses", COMPOSITE_TOL)
def _occ(rng):
    g, s = _p(rng, 4, 6), _p(rng, 4, 6)
    return (lambda: L.occ_loss(_unit(g), _unit(s), 0.1)), [g, s]


@register("l2w_loss", "losses", COMPOSITE_TOL)
def _l2w(rng):
    l = _p(rng, 3, 5, 6)
    words = [_p(rng, k, 6) for k in (1, 2, 3)]
    # gamma3 is lowered so the softmax is not saturated to float noise
    return (lambda: L.l2w_loss(_unit(l), [_unit(w) for w in words], 5.0, 5.0, 5.0)), [l] + words


def tiny_config() -> ModelConfig:
    return ModelConfig(F=8, T=8, c_c=8, c_z=4, g_stem_channels=4, g_channels=(4, 4, 4),
                       d_channels=(4, 4, 4), c_g=8, c_embed=8, g_out_bias=0.0)


def _tiny_models(rng):
    cfg = tiny_config()
    G, D = Generator(cfg, rng), Discriminator(cfg, rng)
    # v starts at zero; give it values so the attention paths carry gradient
    for net in (G, D):
        for name, p in net.named_parameters().items():
            if name.endswith(".v") or ".q_" in name or ".k_" in name:
                p.data = (rng.standard_normal(p.shape) * 0.3).astype(np.float32)
    conds = CondTensors.from_conds([encode_text([1, 3], 8, 0), encode_text([2], 8, 0)])
    z = rng.standard_normal((2, 4))
    return G, D, conds, z


# ReLU kinks inside the networks need a small step; fine in float64
@register("end2end_g_hinge", "end2end", COMPOSITE_TOL, eps=1e-6)
def _end2end_g(rng):
    G, D, conds, z = _tiny_models(rng)
    params = list(G.named_parameters().values())
    return (lambda: L.hinge_g(D.forward(G.forward(Tensor(z), conds), conds).logit)), params


@register("end2end_d_total", "end2end", COMPOSITE_TOL, eps=1e-6)
def _end2end_d(rng):
    G, D, conds, z = _tiny_models(rng)
    real = rng.uniform(0, 1, (2, 8, 8, 1))
    fake = G.forward(Tensor(z), conds).data
    cfg = L.ContrastiveConfig(gamma3=5.0)

    def f():
        r = D.forward(Tensor(real), conds)
        fo = D.forward(Tensor(fake), conds)
        return L.compose_d_losses(r.logit, fo.logit, r.emb, cfg)[0]

    return f, list(D.named_parameters().values())


def scopes() -> list[str]:
    return ["tensor", "attention", "losses", "end2end"]


def run_scope(scope: str, seed: int = 0, fault: str | None = None) -> list[tuple[str, float, float, bool]]:
    """Run every check in ``scope`` ("all" for everything); returns (name, err, tol, ok) rows."""
    rows = []
    for chk in REGISTRY.values():
        if scope != "all" and chk.scope != scope:
            continue
        err = chk.run(seed, analytic_scale=1.5 if chk.name == fault else 1.0)
        rows.append((chk.name, err, chk.tol, bool(err < chk.tol)))
    return rows
