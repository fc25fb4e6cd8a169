"""
Matching error against the true sun
===================================

The reference chips are always shaded with the presumed sun (intensity 10,
azimuth 0, elevation 60). Sweep each true-sun parameter in turn and watch
the matching error grow away from the presumed value.
"""

from terranav.experiments import run_sweep
from terranav.simworld import ScenarioConfig

base = ScenarioConfig(pixel_noise=0.05, plan_error=0.0, duration=100)
sweeps = {
    "intensity": [0.1, 2, 5, 10, 12],
    "azimuth": [-15, 0, 15, 30, 45],
    "elevation": [45, 52.5, 60, 67.5, 75],
}
for axis, values in sweeps.items():
    print(f"\n{axis:>10}  mean px  max px  georef m  accepted")
    for row in run_sweep(base, axis, values, n_keyframes=20):
        print(f"{row.value:10g}  {row.mean_px_err:7.3f}  {row.max_px_err:6.3f}  {row.mean_georef_err_m:8.3f}  "
              f"{row.accepted:8d}")
