#!/usr/bin/env python3
# Adversarial and contrastive losses on hand-built embeddings.

import math

import numpy as np

from sdtgan import losses as L
from sdtgan import tensor as tc
from sdtgan.tensor import Tensor


def main():
    # hinge: nothing to learn once the margins are met
    print("hinge_d at +-2:", float(L.hinge_d(Tensor([2.0, 2.0]), Tensor([-2.0, -2.0])).data))
    print("hinge_d at 0  :", float(L.hinge_d(Tensor([0.0, 0.0]), Tensor([0.0, 0.0])).data))

    # matched orthogonal pairs at tau=0.1
    e = Tensor(np.eye(2))
    print("g2s", float(L.g2s_loss(e, e, 0.1).data), "vs ln(1+e^-10) =", math.log1p(math.exp(-10)))

    # no information: every similarity equal gives ln N
    same = Tensor(np.tile([1.0, 0.0], (4, 1)))
    print("g2s symmetric", float(L.g2s_loss(same, same).data), "ln 4 =", math.log(4))

    # temperature sharpens the contrast
    g = tc.l2_normalize(Tensor(np.eye(3) + 0.2), -1)
    for tau in (1.0, 0.5, 0.1):
        print(f"tau={tau:<4} g2s={float(L.g2s_loss(g, g, tau).data):.4f}")

    # word-to-region matching: one word, one region, score is the dot product
    w = Tensor([[0.6, 0.8]])
    alpha, ctx = L.l2w_attention(w, Tensor([[1.0, 0.0]]))
    print("alpha", alpha.data, "score", float(L.l2w_score(w, ctx).data))

    # occ: the own sentence against other samples' features
    e4 = Tensor(np.eye(4))
    print("occ", float(L.occ_loss(e4, e4, 0.1).data), "expected", math.log((math.exp(10) + 3) / math.exp(10)))


if __name__ == "__main__":
    # float64 so the closed forms line up to many digits
    with tc.precision(np.float64):
        main()
