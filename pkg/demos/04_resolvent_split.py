"""
Head and tail of the resolvent
==============================

For a bounded generator X the resolvent (z - X)^-m splits into a part from
[0, 3K] and a tail.  The head decays like the incomplete gamma function.
"""
import numpy as np

from anosovlab import resolvent_probe as rp

scalar = rp.SemigroupSample.scalar(1.0)
print(" m   head          closed form")
for m in range(1, 9):
    sp = rp.split_head_tail(1.0, m, 1.0, scalar)
    print(f"{m:2d}  {sp.head[0, 0].real:.10f}  {rp.check_scalar_head(1.0, 1.0, 1.0, m):.10f}")

g = rp.SemigroupSample.random(5, np.random.default_rng(3))
for m in (1, 3, 6):
    sp = rp.split_head_tail(0.8 + 0.5j, m, 1.0, g)
    print(f"5x5 sample m={m}: |head + tail - R^m| = {sp.meta['reconstruction_error']:.1e}")

rep = rp.verify_head_bound(g, 1.0, 1.0, range(1, 13))
print("head bound for m <= 12:", "ok" if rep.passed else "violated")
