"""
Recovering image shifts with phase correlation
==============================================

Shift a textured image by known integer and fractional amounts and read the
offsets back from the peak of the normalised cross power spectrum. Then match
a shaded terrain image against the raw elevations it came from.
"""

import numpy as np
from scipy import ndimage

from terranav.hillshade import IlluminationConfig, shade
from terranav.phasecorr import circular_shift, fourier_shift, match_translation
from terranav.simworld import ScenarioConfig, scene_dem

rng = np.random.default_rng(0)
img = ndimage.gaussian_filter(rng.normal(size=(128, 128)), 2.0, mode="wrap")

# an integer wrap-around shift comes back exactly, with a peak of 1
r = match_translation(circular_shift(img, 7, -12), img, windowing="none")
print(f"integer shift (7, -12)    -> ({r.dx:+.3f}, {r.dy:+.3f}), peak {r.peak:.3f}")

# fractional shifts are read from the shape of the peak
r = match_translation(fourier_shift(img, 3.4, 1.75), img, windowing="none")
print(f"fractional shift (3.4, 1.75) -> ({r.dx:+.3f}, {r.dy:+.3f}), peak {r.peak:.3f}")

# pure noise has no shared content, so the peak collapses
r = match_translation(rng.normal(size=(128, 128)), img)
print(f"unrelated images           -> peak {r.peak:.3f}, low confidence: {r.low_confidence}")

# different modalities: a sunlit render offset by (-5, +3) from the reference crop
dem = scene_dem(ScenarioConfig(seed=2))
sun = IlluminationConfig.from_degrees(10, 0, 60)
optical = shade(dem, sun).pixels[40:168, 50:178]

# raw elevations share the terrain but not its appearance, and the offset is biased
r = match_translation(optical, dem.elevations[43:171, 45:173])
print(f"optical vs raw elevation   -> ({r.dx:+.3f}, {r.dy:+.3f}), peak {r.peak:.3f}")

# shading the elevations first with the sun we expect removes the bias
chip = shade(dem, sun).pixels[43:171, 45:173]
r = match_translation(optical, chip)
print(f"optical vs shaded chip     -> ({r.dx:+.3f}, {r.dy:+.3f}), peak {r.peak:.3f}")
