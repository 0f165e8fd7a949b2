"""A vehicle that never moves cannot reveal its GNSS lag.

At rest a delayed position fix equals the current one, so the measurement
carries no information about the delay. The filter's delay variance should
stay at its prior. A moving run is shown for contrast.
"""

import numpy as np

from galins.runner import run_filter
from galins.simulator import InitConfig, SensorConfig, TrajectoryConfig, stationary_config, synthesize

quiet = SensorConfig(gyro_noise=0, accel_noise=0, gyro_bias_rw=0, accel_bias_rw=0, gnss_pos_std=0, delay=0.1)

for label, traj in (("hovering", stationary_config(60.0)), ("flying", TrajectoryConfig(duration=60.0))):
    sim = synthesize(traj, quiet, InitConfig.exact())
    res = run_filter(sim, "eqf")
    std = np.sqrt(res.delta_var)
    print(f"{label:9s} delay std {1e3 * std[0]:6.1f} ms -> {1e3 * std[-1]:6.2f} ms, "
          f"final estimate {1e3 * res.delta[-1]:6.1f} ms (truth 100 ms)")
