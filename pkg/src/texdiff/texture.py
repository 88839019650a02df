"""Frequency-domain texture extraction.

The RGB input is downsampled to a small working size, transformed per
channel to a DC-centered spectrum, stripped of its low-frequency bins below
a radial threshold, and transformed back. What survives is the
high-frequency texture content (edges, fine patterns).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import ConfigError, NumericalError, as_chw, resample


@dataclass
class Spectrum:
    """Complex spectrum in DC-centered layout (channel-major)."""

    data: np.ndarray  # complex, (C, H, W)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ConfigError(f"Spectrum expects rank-3 data, got shape {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape


@dataclass
class TexConfig:
    """Texture-extraction knobs.

    alpha is the high-pass cutoff as a fraction of the maximum spectral
    radius; 0 keeps everything, 1 removes everything.
    """

    alpha: float = 0.3
    target_h: int = 12
    target_w: int = 12

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.target_h < 2 or self.target_w < 2:
            raise ConfigError("texture target dims must be >= 2")


def fft2(x: np.ndarray) -> Spectrum:
    """Per-channel 2-D DFT, shifted so the DC bin sits at (H//2, W//2).

    Arbitrary (non-power-of-two) sizes are supported.
    """
    x = as_chw(x, "fft2 input")
    if x.shape[1] < 2 or x.shape[2] < 2:
        raise ConfigError(f"fft2 needs H, W >= 2, got {x.shape[1:]}")
    spec = np.fft.fftshift(np.fft.fft2(x, axes=(-2, -1)), axes=(-2, -1))
    return Spectrum(data=spec)


def ifft2(spec: Spectrum) -> np.ndarray:
    """Inverse of fft2; returns the complex reconstruction."""
    return np.fft.ifft2(np.fft.ifftshift(spec.data, axes=(-2, -1)), axes=(-2, -1))


def radial_mask(h: int, w: int, alpha: float) -> np.ndarray:
    """Boolean stop-band: True where centered radius <= alpha * hypot(H/2, W/2)."""
    cy, cx = h // 2, w // 2
    dy = np.arange(h) - cy
    dx = np.arange(w) - cx
    dist = np.hypot(dy[:, None], dx[None, :])
    return dist <= alpha * np.hypot(h / 2.0, w / 2.0)


def high_pass(spec: Spectrum, alpha: float) -> Spectrum:
    """Zero all bins within the centered radius alpha * r_max.

    alpha = 0 is the identity; any alpha > 0 removes at least the DC bin.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    out = spec.data.copy()
    if alpha > 0.0:
        _, h, w = spec.data.shape
        out[:, radial_mask(h, w, alpha)] = 0.0
    return Spectrum(data=out)


def extract_texture(x: np.ndarray, cfg: TexConfig) -> np.ndarray:
    """Texture map of an RGB image: downsample, high-pass in frequency, invert.

    Returns the real part of the filtered reconstruction at the working size
    (3, target_h, target_w). The filter's radial symmetry keeps the
    imaginary residue at machine-precision level; it is checked anyway.
    """
    x = as_chw(x, "extract_texture input")
    x_d = resample(x, cfg.target_h, cfg.target_w, method="area")
    spec = high_pass(fft2(x_d), cfg.alpha)
    rec = ifft2(spec)
    residue = np.abs(rec.imag).max()
    if residue >= 1e-6:
        raise NumericalError(f"texture reconstruction imaginary residue {residue:.3g}")
    return np.ascontiguousarray(rec.real)
