"""
What the cross power spectrum of an optical/elevation pair contains
===================================================================

Under a low sun the shading of a terrain is roughly its slope along the sun
direction, so the spectrum of an optical image against the elevations splits
into a sign pattern set by the sun azimuth and translation fringes set by the
offset. Moving the sun changes the first and leaves the second alone.
"""

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from terranav.hillshade import IlluminationConfig, shade
from terranav.phasecorr import cross_power_spectrum, decompose_spectrum, forward_spectrum
from terranav.simworld import ScenarioConfig, scene_dem

out = Path("demo_output")
out.mkdir(exist_ok=True)
dem = scene_dem(ScenarioConfig(seed=2))

fig, ax = plt.subplots(figsize=(6, 4))
for azimuth in (0.0, 120.0):
    sun = IlluminationConfig.from_degrees(10, azimuth, 10)
    optical = shade(dem, sun).pixels
    q = cross_power_spectrum(forward_spectrum(optical[40:168, 50:178], "hann"),
                             forward_spectrum(dem.elevations[43:171, 45:173], "hann"))
    rep = decompose_spectrum(q, sun)
    print(f"azimuth {azimuth:5.1f} deg: sign agreement {rep.sign_agreement:.2f}, "
          f"fringe density {rep.fringe_density:.3f}, orientation {math.degrees(rep.fringe_orientation):.1f} deg, "
          f"shift ({rep.shift[0]:+.2f}, {rep.shift[1]:+.2f})")
    ax.plot(rep.angles, rep.angular_profile / abs(rep.angular_profile).max(), label=f"sun at {azimuth:g} deg")

ax.set_xlabel("spectral angle (rad)")
ax.set_ylabel("demodulated quadrature (normalised)")
ax.legend()
fig.savefig(out / "angular_profile.svg")
print(f"profile plot written to {out / 'angular_profile.svg'}")
