#!/usr/bin/env python3
# Time-frequency cross-attention on a toy grid, checked against a loop version.

import numpy as np

from sdtgan import tensor as tc
from sdtgan.attention import MultiTFCAParams, SelfTFCAParams, axis_pool, multi_tfca, self_tfca
from sdtgan.oracles import oracle_multi_tfca, oracle_self_tfca
from sdtgan.tensor import Tensor

rng = np.random.default_rng(0)
F, T, C = 6, 8, 4
x = rng.standard_normal((F, T, C))

# pooled views: mean over time per frequency row, mean over frequency per frame
x_f, x_t = axis_pool(Tensor(x))
print("x_f", x_f.shape, "x_t", x_t.shape)

with tc.precision(np.float64):
    m = lambda *s: Tensor(rng.standard_normal(s) * 0.5)
    sp = SelfTFCAParams(m(C, C), m(C, C), m(C, C), m(C, C), m(C, C))
    out, maps = self_tfca(Tensor(x), sp)

# each frequency row attends over frames and vice versa
print("f2t rows sum to", maps["f2t"].data.sum(-1).round(6))
print("fused map total", maps["fused_self"].data.sum(), "= F + T =", F + T)

ref, _ = oracle_self_tfca(x, sp)
print("max diff vs loop version", np.abs(out.data - np.array(ref)).max())

# condition-queried: three "words" each spread one unit of mass over the grid
with tc.precision(np.float64):
    c = rng.standard_normal((3, 5))
    mp = MultiTFCAParams(m(5, C), m(5, C), m(C, C), m(C, C), m(C, C))
    out, maps = multi_tfca(Tensor(x), Tensor(c), mp)
print("fused multi total", maps["fused_multi"].data.sum())
ref, _ = oracle_multi_tfca(x, c, mp)
print("max diff vs loop version", np.abs(out.data - np.array(ref)).max())

# value projections start at zero, so a fresh block passes its input through
fresh = SelfTFCAParams.init(C, rng)
print("fresh block is identity:", np.array_equal(self_tfca(Tensor(x), fresh)[0].data, x.astype(np.float32)))
