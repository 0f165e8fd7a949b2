"""Track the Galilean frame between two moving bodies from lagged measurements.

The observer knows the lag and only has to pull its frame estimate onto the
truth. Larger gains converge faster; all of them end at machine precision.
"""

import numpy as np

from galins.twobody import TwoBodyConfig, run_twobody

for gain in (0.05, 0.2, 0.5, 1.0):
    res = run_twobody(TwoBodyConfig(duration=30.0, gain=gain))
    below = np.nonzero(res.error_norm < 1e-3)[0]
    when = f"{res.t[below[0]]:5.2f} s" if below.size else "   never"
    print(f"gain {gain:4.2f}: error {res.error_norm[0]:.3f} -> {res.error_norm[-1]:.1e}, below 1e-3 after {when}")
