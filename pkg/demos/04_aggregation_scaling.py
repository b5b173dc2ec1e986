"""Why scan, not attend.

The aggregation stage exists to mix long concatenated token sequences, and
the scan is what keeps that affordable. Two views of the same fact here.
The operation-count models say the scan grows linearly with tokens while
attention grows quadratically. The wall clock agrees.
"""

import numpy as np

from trifuse.bench import bench_attention, bench_block, bench_scan, fit_linear
from trifuse.ssm import attention_flops, ssm_flops

print("operation counts, doubling the token count each row")
print(f"{'tokens':>8} {'scan':>14} {'attention':>14}")
for k in (1024, 2048, 4096, 8192):
    print(f"{k:>8} {ssm_flops(64, 16, 32, k):>14,} "
          f"{attention_flops(64, 4, k):>14,}")

lengths = [128, 256, 512, 1024]
print("\nmeasured forward times (median of 3)")

for label, fn in (("scan", bench_scan), ("block", bench_block),
                  ("attention", bench_attention)):
    rows = fn(lengths, reps=3, warmup=1, seed=0)
    times = " ".join(f"t({r.n})={r.seconds:.2e}s" for r in rows)
    _, _, r2 = fit_linear(np.array(lengths, float),
                          np.array([r.seconds for r in rows]))
    print(f"{label:>10}: {times}  linear fit r2={r2:.4f}")

att = bench_attention([512, 1024], reps=3, warmup=1, seed=0)
print(f"\nattention doubling ratio t(1024)/t(512) = "
      f"{att[1].seconds / att[0].seconds:.2f} (a linear op would give 2)")
