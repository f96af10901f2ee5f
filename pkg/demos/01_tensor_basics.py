#!/usr/bin/env python3
# The autodiff core: tensors, a tape, gradients, and a finite-difference check.

import numpy as np

from sdtgan import tensor as tc
from sdtgan.gradcheck import finite_diff_check
from sdtgan.tensor import Tape, Tensor

x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
w = Tensor(np.ones((3, 2)) * 0.5, requires_grad=True)
print("x", x.shape, x.data.dtype)   # float32 unless asked otherwise

# record ops on a tape, then walk it backwards
with Tape() as tape:
    y = tc.softmax_axis(tc.matmul(x, w), -1)
    loss = tc.sum_axis(tc.mul(y, y))
grads = tape.backward(loss)
print("loss", float(loss.data))
print("dL/dw\n", grads[w])

# softmax of [0, ln 3] is [1/4, 3/4]
print(tc.softmax_axis(Tensor([0.0, np.log(3.0)]), 0).data)

# conv on channels-last grids, same padding
grid = Tensor(np.ones((6, 6, 1)))
box = Tensor(np.ones((3, 3, 1, 1)))
print(tc.conv2d(grid, box, 1).data[:, :, 0])  # 9 inside, less at the border

# central differences agree with the tape
p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
print("rel err", finite_diff_check(lambda: tc.sum_axis(tc.mul(p, p)), [p]))
