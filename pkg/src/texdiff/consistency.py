"""Structural consistency: windowed SSIM between the projected depth and the RGB
image, the SC loss (1 - SSIM), and the weighted total-loss composition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numeric import ConfigError, NumericalError, ShapeError, as_chw


@dataclass
class SSIMParams:
    """Window shape and stabilization constants.

    Defaults follow the common single-scale formulation: 11x11 Gaussian
    window with sigma 1.5, c1 = (0.01 L)^2 and c2 = (0.03 L)^2 at dynamic
    range L = 1. Statistics are taken over fully-contained (valid) windows.
    """

    window: int = 11
    window_kind: str = "gaussian"  # gaussian | uniform
    sigma: float = 1.5
    c1: float = 0.01**2
    c2: float = 0.03**2

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 1:
            raise ConfigError(f"SSIM window must be odd, got {self.window}")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError("SSIM constants c1, c2 must be > 0")
        if self.window_kind not in ("gaussian", "uniform"):
            raise ConfigError(f"unknown window kind {self.window_kind!r}")


@dataclass
class LossReport:
    """Scalar loss terms; l_total is always lam * l_sc + l_seg."""

    l_sc: float
    l_seg: float
    lam: float
    l_total: float = field(init=False)

    def __post_init__(self):
        self.l_total = self.lam * self.l_sc + self.l_seg

    def to_dict(self) -> dict:
        return {
            "l_sc": self.l_sc,
            "l_seg": self.l_seg,
            "lambda": self.lam,
            "l_total": self.l_total,
        }


def window_kernel(p: SSIMParams) -> np.ndarray:
    """Normalized 2-D window weights."""
    k = p.window
    if p.window_kind == "uniform":
        return np.full((k, k), 1.0 / (k * k))
    ax = np.arange(k) - (k - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * p.sigma**2))
    kern = np.outer(g, g)
    return kern / kern.sum()


def _window_means(x: np.ndarray, kern: np.ndarray) -> np.ndarray:
    """Weighted means over all valid window positions: (C, Ho, Wo)."""
    k = kern.shape[0]
    win = sliding_window_view(x, (k, k), axis=(1, 2))
    return np.tensordot(win, kern, axes=([3, 4], [0, 1]))


def _ssim_terms(a: np.ndarray, b: np.ndarray, p: SSIMParams):
    kern = window_kernel(p)
    mu_a = _window_means(a, kern)
    mu_b = _window_means(b, kern)
    s_aa = _window_means(a * a, kern)
    s_bb = _window_means(b * b, kern)
    s_ab = _window_means(a * b, kern)
    var_a = s_aa - mu_a * mu_a
    var_b = s_bb - mu_b * mu_b
    cov = s_ab - mu_a * mu_b
    a1 = 2.0 * mu_a * mu_b + p.c1
    a2 = 2.0 * cov + p.c2
    b1 = mu_a * mu_a + mu_b * mu_b + p.c1
    b2 = var_a + var_b + p.c2
    return kern, mu_a, mu_b, a1, a2, b1, b2


def ssim(a: np.ndarray, b: np.ndarray, p: SSIMParams | None = None) -> float:
    """Mean SSIM over all channels and valid window positions.

    Requires both spatial dims >= the window size. ssim(x, x) is exactly 1.
    """
    p = p or SSIMParams()
    a = as_chw(a, "ssim a")
    b = as_chw(b, "ssim b")
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes differ, {a.shape} vs {b.shape}")
    if a.shape[1] < p.window or a.shape[2] < p.window:
        raise ShapeError(
            f"ssim: spatial dims {a.shape[1:]} smaller than window {p.window}"
        )
    _, _, _, a1, a2, b1, b2 = _ssim_terms(a, b, p)
    return float(np.mean((a1 * a2) / (b1 * b2)))


def _scatter_windows(m: np.ndarray, kern: np.ndarray) -> np.ndarray:
    """Adjoint of _window_means: spread per-window values back onto pixels."""
    k = kern.shape[0]
    pad = np.pad(m, ((0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    win = sliding_window_view(pad, (k, k), axis=(1, 2))
    return np.tensordot(win, kern[::-1, ::-1], axes=([3, 4], [0, 1]))


def ssim_backward(
    a: np.ndarray, b: np.ndarray, p: SSIMParams | None = None, g: float = 1.0
) -> np.ndarray:
    """Gradient of ssim(a, b) with respect to its first argument."""
    p = p or SSIMParams()
    kern, mu_a, mu_b, a1, a2, b1, b2 = _ssim_terms(a, b, p)
    denom = b1 * b2
    s = (a1 * a2) / denom
    # d ssim_w / d a_i = w_i * (coef_const + coef_b * b_i + coef_a * a_i)
    coef_const = (2.0 * mu_b * a2 - 2.0 * a1 * mu_b - s * (2.0 * mu_a * b2 - 2.0 * b1 * mu_a)) / denom
    coef_b = 2.0 * a1 / denom
    coef_a = -2.0 * s * b1 / denom
    scale = g / s.size
    grad = (
        _scatter_windows(coef_const, kern)
        + b * _scatter_windows(coef_b, kern)
        + a * _scatter_windows(coef_a, kern)
    )
    return scale * grad


def sc_loss(d_u: np.ndarray, x: np.ndarray, p: SSIMParams | None = None) -> float:
    """Structural consistency loss: 1 - ssim(d_u, x). Zero iff inputs identical."""
    return 1.0 - ssim(d_u, x, p)


def sc_loss_backward(
    d_u: np.ndarray, x: np.ndarray, p: SSIMParams | None = None, g: float = 1.0
) -> np.ndarray:
    """Gradient of sc_loss with respect to d_u."""
    return ssim_backward(d_u, x, p, g=-g)


def total_loss(l_sc: float, l_seg: float, lam: float) -> LossReport:
    """Weighted loss composition: l_total = lam * l_sc + l_seg."""
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    for name, v in (("l_sc", l_sc), ("l_seg", l_seg), ("lambda", lam)):
        if not np.isfinite(v):
            raise NumericalError(f"total_loss: {name} is not finite")
    return LossReport(l_sc=float(l_sc), l_seg=float(l_seg), lam=float(lam))
