"""The selective scan, slow way and fast way.

The reference implementation walks the sequence token by token. The fast
path runs the same recurrence as a chunked associative scan. They are the
same function, and this script measures just how same: to around 1e-14 on
a random layer, independent of the chunk size.

It also shows the discretization choice. The Euler input path multiplies
by delta; the exact hold path integrates the input over the step. The two
agree as delta shrinks, which is easy to see by pinning the initial step
size of a fresh layer.
"""

import numpy as np

from trifuse.ssm import SelectiveScan, scan_fast, scan_sequential
from trifuse.tensor import Tensor, tsum

rng = np.random.default_rng(3)

layer = SelectiveScan(dim=4, d_state=8, dt_rank=4,
                      rng=np.random.default_rng(1))
x = Tensor(rng.standard_normal((4, 300)))
disc = layer.discretize(x)
print("coefficient shapes: abar", disc.abar.shape, "bbarx", disc.bbarx.shape,
      "c", disc.c.shape)

slow = scan_sequential(disc)
for chunk in (1, 7, 64, 4096):
    fast = scan_fast(disc, chunk=chunk)
    gap = np.abs(fast.data - slow.data).max()
    print(f"chunk {chunk:4d}: max |fast - sequential| = {gap:.3e}")

# gradients flow through the scan like through any other op
loss = tsum(scan_fast(layer.discretize(x)))
loss.backward()
print("grad reaches the step-size projection:",
      float(np.abs(layer.dt_up.weight.grad).max()) > 0)

# Euler vs exact hold, converging as the step size shrinks
print("\ninput discretization gap by step size")
for dt in (1e-1, 1e-2, 1e-3):
    euler = SelectiveScan(4, 8, 4, rng=np.random.default_rng(1),
                          dt_min=dt, dt_max=dt)
    hold = SelectiveScan(4, 8, 4, rng=np.random.default_rng(1),
                         zoh_input=True, dt_min=dt, dt_max=dt)
    gap = np.abs(euler(x).data - hold(x).data).max()
    print(f"  dt {dt:g}: max gap {gap:.3e}")
