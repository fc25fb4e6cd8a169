"""Translation estimation by phase correlation.

The normalised cross power spectrum of two images is a pure phase ramp when
one is a translated copy of the other; its inverse transform is a delta
function whose position is the translation and whose height (1 for identical
images) measures match quality.

Sign convention: :func:`match_translation` returns ``(dx, dy)`` such that the
content of ``target`` appears displaced by ``+dx`` columns and ``+dy`` rows
relative to ``reference`` (``target == circular_shift(reference, dx, dy)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError
from .raster import RasterImage

__all__ = [
    "Spectrum",
    "CrossPowerSpectrum",
    "MatchResult",
    "DecompositionReport",
    "forward_spectrum",
    "cross_power_spectrum",
    "peak_offset",
    "match_translation",
    "decompose_spectrum",
    "circular_shift",
    "fourier_shift",
]

EPS_RELATIVE = 1e-12
SNAP = 1e-9
PEAK_SMOOTHING = 1.0  # px, Gaussian applied to the delta surface before the sub-pixel fit


@dataclass(frozen=True, eq=False)
class Spectrum:
    """2-D DFT coefficients, DC at index ``[0, 0]``."""

    coeffs: np.ndarray

    @property
    def shape(self):
        return self.coeffs.shape


@dataclass(frozen=True, eq=False)
class CrossPowerSpectrum:
    """Normalised cross power spectrum.

    ``active`` marks bins whose un-normalised magnitude reached ``eps``; only
    these carry unit magnitude.
    """

    coeffs: np.ndarray
    eps: float
    active: np.ndarray

    @property
    def shape(self):
        return self.coeffs.shape

    @property
    def n_active(self):
        return int(self.active.sum())


@dataclass(frozen=True)
class MatchResult:
    dx: float
    dy: float
    peak: float
    integer_dx: int
    integer_dy: int
    low_confidence: bool = False

    def as_dict(self):
        return {
            "dx": self.dx,
            "dy": self.dy,
            "peak": self.peak,
            "integer_dx": self.integer_dx,
            "integer_dy": self.integer_dy,
            "low_confidence": self.low_confidence,
        }


@dataclass(frozen=True)
class DecompositionReport:
    """Spectral diagnostics of an optical/DEM cross power spectrum.

    ``sign_agreement`` is the fraction of angular bins whose mean (over
    frequency magnitude) illumination component has the sign of
    ``cos(theta - azimuth)``. The fringe fields describe the translation ramp.
    """

    sign_agreement: float
    fringe_density: float
    fringe_orientation: float
    peak_attenuation: float
    shift: tuple = (0.0, 0.0)
    angles: np.ndarray = field(default=None, repr=False)
    angular_profile: np.ndarray = field(default=None, repr=False)

    def as_dict(self):
        return {
            "sign_agreement": self.sign_agreement,
            "fringe_density": self.fringe_density,
            "fringe_orientation": self.fringe_orientation,
            "peak_attenuation": self.peak_attenuation,
            "shift": list(self.shift),
        }


def _pixels(img):
    return img.pixels if isinstance(img, RasterImage) else np.asarray(img, dtype=float)


def _hann2d(shape):
    h, w = shape
    return np.outer(np.hanning(h), np.hanning(w))


def forward_spectrum(img, windowing="none"):
    """DFT of the mean-subtracted (optionally Hann-windowed) image."""
    px = _pixels(img)
    if px.size == 0:
        raise ValueError("cannot transform a zero-area image")
    if windowing not in ("none", "hann"):
        raise ValueError(f"unknown windowing {windowing!r}")
    x = px - px.mean()
    if windowing == "hann":
        x = x * _hann2d(x.shape)
    return Spectrum(np.fft.fft2(x))


def cross_power_spectrum(f1, f2, eps=None):
    """``F1 conj(F2) / max(|F1 conj(F2)|, eps)`` per bin.

    ``eps`` defaults to ``1e-12`` times the largest bin magnitude.
    """
    if f1.shape != f2.shape:
        raise DimensionMismatchError(f"spectra differ in shape: {f1.shape} vs {f2.shape}")
    c = f1.coeffs * np.conj(f2.coeffs)
    mag = np.abs(c)
    if eps is None:
        eps = EPS_RELATIVE * float(mag.max()) if mag.size else 0.0
    eps = max(float(eps), np.finfo(float).tiny)
    active = mag >= eps
    return CrossPowerSpectrum(c / np.maximum(mag, eps), eps, active)


def _unwrap(i, n):
    return i - n if i >= n // 2 else i


def _log_gauss_vertex(ym, y0, yp):
    floor = 1e-12
    lm, l0, lp = (math.log(max(v, floor)) for v in (ym, y0, yp))
    den = lm - 2.0 * l0 + lp
    if den >= 0:
        return 0.0
    return 0.5 * (lm - lp) / den


def _local_surface(coeffs, ix, iy, sigma):
    """Gaussian-smoothed inverse transform evaluated on the 3x3 block around (ix, iy)."""
    h, w = coeffs.shape
    fu = np.fft.fftfreq(w)
    fv = np.fft.fftfreq(h)
    a = coeffs
    if sigma > 0:
        a = a * np.exp(-2.0 * math.pi**2 * sigma**2 * (fv[:, None] ** 2 + fu[None, :] ** 2))
    offs = np.array([-1, 0, 1])
    ex = np.exp(2j * math.pi * np.outer(fu * w, (ix + offs)) / w)  # (w, 3)
    ey = np.exp(2j * math.pi * np.outer(fv * h, (iy + offs)) / h)  # (h, 3)
    return np.real(ey.T @ (a @ ex)) / a.size  # [row offset, col offset]


def peak_offset(q, smoothing=PEAK_SMOOTHING):
    """Locate the delta peak of the inverse transform of ``q``.

    The integer offset is the maximum of the real part of the inverse
    transform, normalised by the number of active bins so that identical
    images score exactly 1. The sub-pixel part is the vertex of a Gaussian fit
    (per axis) to the 3x3 neighbourhood of a Gaussian-smoothed copy of the
    surface, which behaves like a Gaussian even when the raw peak is a sinc.
    """
    h, w = q.shape
    n_active = max(q.n_active, 1)
    delta = np.real(np.fft.ifft2(q.coeffs)) * (q.coeffs.size / n_active)
    iy, ix = np.unravel_index(int(np.argmax(delta)), delta.shape)
    peak = float(np.clip(delta[iy, ix], 0.0, 1.0))
    surf = _local_surface(q.coeffs, ix, iy, smoothing)
    sx = _log_gauss_vertex(surf[1, 0], surf[1, 1], surf[1, 2])
    sy = _log_gauss_vertex(surf[0, 1], surf[1, 1], surf[2, 1])
    # rounding residue of a symmetric peak would otherwise break exact integer offsets
    sx = 0.0 if abs(sx) < SNAP else float(np.clip(sx, -1.0, 1.0))
    sy = 0.0 if abs(sy) < SNAP else float(np.clip(sy, -1.0, 1.0))
    idx, idy = _unwrap(int(ix), w), _unwrap(int(iy), h)
    return MatchResult(idx + sx, idy + sy, peak, idx, idy)


def match_translation(target, reference, windowing="hann", eps=None, min_peak=0.05):
    """Phase-correlate two equally sized images.

    Returns the displacement of ``target`` content relative to ``reference``;
    results with ``peak < min_peak`` come back flagged ``low_confidence``.
    """
    a, b = _pixels(target), _pixels(reference)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"images differ in shape: {a.shape} vs {b.shape}")
    q = cross_power_spectrum(forward_spectrum(a, windowing), forward_spectrum(b, windowing), eps)
    r = peak_offset(q)
    if r.peak < min_peak:
        r = MatchResult(r.dx, r.dy, r.peak, r.integer_dx, r.integer_dy, True)
    return r


def circular_shift(img, dx, dy):
    """Move image content by integer ``(dx, dy)`` with wrap-around."""
    px = np.roll(_pixels(img), shift=(int(dy), int(dx)), axis=(0, 1))
    return RasterImage(px) if isinstance(img, RasterImage) else px


def fourier_shift(img, dx, dy):
    """Move image content by a fractional ``(dx, dy)`` via a frequency-domain phase ramp."""
    px = _pixels(img)
    h, w = px.shape
    fu = np.fft.fftfreq(w)[None, :]
    fv = np.fft.fftfreq(h)[:, None]
    out = np.real(np.fft.ifft2(np.fft.fft2(px) * np.exp(-2j * math.pi * (dx * fu + dy * fv))))
    return out


# --------------------------------------------------------------------------
# spectral decomposition diagnostics

def _phase_ramp(shape, a, b):
    h, w = shape
    fu = np.fft.fftfreq(w)[None, :]
    fv = np.fft.fftfreq(h)[:, None]
    return np.exp(-2j * math.pi * (a * fu + b * fv))


def _fit_fringes(q, refine_iters=3):
    """Translation ramp of ``q`` that is blind to per-bin sign flips.

    Squaring the spectrum removes the +-1 factors contributed by the
    illumination term and doubles the ramp; the doubled ramp is located by
    its delta peak and refined by a weighted least-squares plane fit to the
    residual phase.
    """
    q2 = q.coeffs**2
    # a quadrature (i * sign) factor squares to -1, which makes the doubled
    # ramp's delta negative; flip so that the dominant extremum is a maximum
    d = np.real(np.fft.ifft2(q2))
    if -d.min() > d.max():
        q2 = -q2
    sq = CrossPowerSpectrum(q2, q.eps, q.active)
    first = peak_offset(sq)
    a2, b2 = first.dx, first.dy
    h, w = q.shape
    fu = np.broadcast_to(np.fft.fftfreq(w)[None, :], q.shape)
    fv = np.broadcast_to(np.fft.fftfreq(h)[:, None], q.shape)
    # low frequencies are least affected by topographic phase noise
    sel = q.active & (np.hypot(fu, fv) < 0.25) & ((fu != 0) | (fv != 0))
    for _ in range(refine_iters):
        r = q2 * np.conj(_phase_ramp(q.shape, a2, b2))
        c = r[sel].sum()
        if abs(c) == 0:
            break
        r = r * np.conj(c) / abs(c)
        phi = np.angle(r[sel])
        wts = np.abs(r[sel])
        A = np.stack([-2 * math.pi * fu[sel], -2 * math.pi * fv[sel]], axis=1)
        sol, *_ = np.linalg.lstsq(A * wts[:, None], phi * wts, rcond=None)
        a2 += sol[0]
        b2 += sol[1]
        if np.hypot(*sol) < 1e-6:
            break
    return a2 / 2.0, b2 / 2.0


def _polar_resample(values, n_angle, n_radius):
    h, w = values.shape
    shifted = np.fft.fftshift(values)
    angles = -math.pi + (np.arange(n_angle) + 0.5) * (2 * math.pi / n_angle)
    rmax = 0.5 - 1.0 / min(h, w)
    radii = np.linspace(1.5 / min(h, w), rmax, n_radius)
    fu = radii[None, :] * np.cos(angles)[:, None]
    fv = radii[None, :] * np.sin(angles)[:, None]
    col = fu * w + w // 2
    row = fv * h + h // 2
    out = ndimage.map_coordinates(shifted, [row.ravel(), col.ravel()], order=1, mode="wrap")
    return angles, radii, out.reshape(n_angle, n_radius)


def decompose_spectrum(q, illum, n_angle=64, n_radius=32):
    """Split an optical-vs-DEM cross power spectrum into its illumination
    sign structure and its translation fringes.

    ``q`` must come from ``(optical, elevation)`` images laid out like a
    :class:`~terranav.raster.DemGrid` (rows increasing northward), so that
    polar angle ``theta`` matches the azimuth convention of the shading model.
    The shading gradient puts the illumination term in quadrature with the
    elevation spectrum, so its sign structure is read from ``Im(Q)`` after the
    fitted translation ramp has been removed.
    """
    a, b = _fit_fringes(q)
    demod = q.coeffs * np.conj(_phase_ramp(q.shape, a, b))
    angles, _, polar = _polar_resample(np.imag(demod), n_angle, n_radius)
    profile = polar.mean(axis=1)
    expected = np.cos(angles - illum.azimuth)
    valid = np.abs(expected) > 1e-12
    agree = np.sign(profile[valid]) == np.sign(expected[valid])
    sign_agreement = float(agree.mean()) if agree.size else 0.0
    peak = peak_offset(q).peak
    return DecompositionReport(
        sign_agreement=sign_agreement,
        fringe_density=float(math.hypot(a, b)),
        fringe_orientation=float(math.atan2(b, a)),
        peak_attenuation=float(np.clip(peak, 0.0, 1.0)),
        shift=(float(a), float(b)),
        angles=angles,
        angular_profile=profile,
    )
