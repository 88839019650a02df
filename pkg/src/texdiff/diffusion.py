"""Texture diffusion: windowed message passing on a depth latent.

The depth map is encoded to a latent grid at the texture map's resolution.
Per-pixel, per-channel r x r kernels are predicted from the texture map,
normalized by softmax so every kernel is a convex stencil, and applied for
S iterations. Each iteration replaces a pixel with a convex combination of
its (replicate-extended) window, so values never leave the local range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numeric import (
    ConfigError,
    ConvParams,
    ShapeError,
    as_chw,
    conv2d,
    init_conv,
    pad_chw,
    pad_transpose_chw,
    relu,
    resample,
    softmax_axis,
)


@dataclass
class DepthMap:
    """Single-channel depth in [0, 1]."""

    data: np.ndarray  # (1, H, W)
    source: str = "synthetic"  # sensor | estimated | synthetic

    def __post_init__(self):
        self.data = as_chw(self.data, "depth")
        if self.data.shape[0] != 1:
            raise ShapeError(f"depth must have 1 channel, got {self.data.shape[0]}")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ConfigError("depth values must lie in [0, 1]")
        if self.source not in ("sensor", "estimated", "synthetic"):
            raise ConfigError(f"unknown depth source {self.source!r}")


@dataclass
class LatentDepth:
    data: np.ndarray  # (C, h, w)

    def __post_init__(self):
        self.data = as_chw(self.data, "latent depth")

    @property
    def latent_dim(self) -> int:
        return self.data.shape[0]


@dataclass
class KernelField:
    """Per-channel, per-position normalized diffusion stencils.

    data[c, j, u, v] is the weight of window offset j (row-major over the
    r x r neighborhood) for latent channel c at position (u, v). Every
    stencil is strictly positive and sums to 1.
    """

    data: np.ndarray  # (C, r*r, h, w)
    window: int = 7

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 3:
            raise ConfigError(f"window must be odd and >= 3, got {self.window}")
        if self.data.ndim != 4 or self.data.shape[1] != self.window**2:
            raise ShapeError(
                f"kernel field shape {self.data.shape} inconsistent with window {self.window}"
            )
        sums = self.data.sum(axis=1)
        tol = 1e-6 if self.data.dtype == np.float64 else 1e-5
        if np.abs(sums - 1.0).max() > tol:
            raise ConfigError(f"kernel stencils must sum to 1 within {tol}")
        if self.data.min() <= 0.0:
            raise ConfigError("kernel stencils must be strictly positive")
        self._arranged: np.ndarray | None = None

    def arranged(self) -> np.ndarray:
        """(C, h, w, r, r) layout matching latent window views; cached."""
        if self._arranged is None:
            c, _, h, w = self.data.shape
            r = self.window
            self._arranged = np.ascontiguousarray(
                self.data.reshape(c, r, r, h, w).transpose(0, 3, 4, 1, 2)
            )
        return self._arranged


@dataclass
class EnhancedDepth:
    """Diffusion output: final latent plus its 3-channel upscaled projection."""

    latent: np.ndarray  # (C, h, w)
    projected: np.ndarray | None = None  # (3, H, W) once projected
    steps_run: int = 0
    trace: list[np.ndarray] | None = None  # per-step latents when requested


@dataclass
class TxdParams:
    """Everything the diffusion stage needs: encoder, kernel predictor, projector."""

    encoder: list[ConvParams]
    predictor: list[ConvParams]
    projector: ConvParams
    window: int = 7
    latent_dim: int = 24
    steps: int | str = "auto"  # "auto" -> num_steps(h, w, window)
    latent_hw: tuple[int, int] = (12, 12)

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 3:
            raise ConfigError(f"window must be odd and >= 3, got {self.window}")
        need = self.latent_dim * self.window**2
        got = self.predictor[-1].out_ch
        if got != need:
            raise ConfigError(
                f"predictor must emit latent_dim * r^2 = {need} channels, got {got}"
            )
        if isinstance(self.steps, str) and self.steps != "auto":
            raise ConfigError(f"steps must be 'auto' or an integer, got {self.steps!r}")
        if isinstance(self.steps, int) and self.steps < 0:
            raise ConfigError("steps must be >= 0")


def default_txd_params(
    rng: np.random.Generator,
    *,
    latent_dim: int = 24,
    window: int = 7,
    steps: int | str = "auto",
    latent_hw: tuple[int, int] = (12, 12),
    predictor_hidden: int = 48,
    encoder_scale: float = 2.0,
    projector_scale: float = 0.3,
    center_bias: float = 6.0,
    dtype=np.float64,
) -> TxdParams:
    """Default parameter stack.

    Encoder: two 3x3 replicate-padded convs (1 -> C -> C) with ReLU between,
    scaled up so the latent has enough amplitude for downstream heads to
    train at small learning rates. Predictor: 3x3 convs
    3 -> hidden -> C * r^2 with ReLU between; the logit layer starts small
    with a center-tap bias boost, so initial kernels are near-identity and
    early diffusion preserves latent structure while still mixing.
    Projector: 1x1 conv C -> 3 at reduced scale.
    """
    c = latent_dim
    enc = [
        init_conv(rng, c, 1, 3, padding="replicate", weight_scale=encoder_scale, dtype=dtype),
        init_conv(rng, c, c, 3, padding="replicate", weight_scale=encoder_scale, dtype=dtype),
    ]
    r2 = window**2
    logit_conv = init_conv(
        rng, c * r2, predictor_hidden, 3, padding="replicate", weight_scale=0.05, dtype=dtype
    )
    logit_conv.bias[(r2 - 1) // 2 :: r2] = center_bias
    pred = [
        init_conv(rng, predictor_hidden, 3, 3, padding="replicate", dtype=dtype),
        logit_conv,
    ]
    proj = init_conv(rng, 3, c, 1, weight_scale=projector_scale, dtype=dtype)
    return TxdParams(
        encoder=enc, predictor=pred, projector=proj,
        window=window, latent_dim=c, steps=steps, latent_hw=latent_hw,
    )


def _conv_stack(x: np.ndarray, convs: list[ConvParams]) -> np.ndarray:
    """Convs with ReLU between (none after the last)."""
    out = x
    for i, p in enumerate(convs):
        if i > 0:
            out = relu(out)
        out = conv2d(out, p)
    return out


def encode_depth(d: DepthMap, params: TxdParams) -> LatentDepth:
    """Depth -> latent features at the texture resolution."""
    feats = _conv_stack(d.data, params.encoder)
    if feats.shape[0] != params.latent_dim:
        raise ConfigError(
            f"encoder produced {feats.shape[0]} channels, expected {params.latent_dim}"
        )
    h, w = params.latent_hw
    return LatentDepth(data=resample(feats, h, w, method="area"))


def predict_kernels(xh: np.ndarray, params: TxdParams) -> KernelField:
    """Texture map -> normalized per-pixel diffusion kernels.

    The predictor emits C * r^2 logit maps; logit channel c * r^2 + j is
    regrouped to stencil entry j of latent channel c, then each stencil is
    normalized by softmax over its r^2 entries.
    """
    xh = as_chw(xh, "texture map")
    if xh.shape[1:] != tuple(params.latent_hw):
        raise ShapeError(
            f"texture spatial dims {xh.shape[1:]} != latent dims {params.latent_hw}"
        )
    if xh.shape[0] != params.predictor[0].in_ch:
        raise ShapeError(
            f"texture has {xh.shape[0]} channels, predictor expects "
            f"{params.predictor[0].in_ch}"
        )
    logits = _conv_stack(xh, params.predictor)
    r2 = params.window**2
    c, h, w = params.latent_dim, logits.shape[1], logits.shape[2]
    grouped = logits.reshape(c, r2, h, w)
    return KernelField(data=softmax_axis(grouped, axis=1), window=params.window)


def _latent_windows(latent: np.ndarray, r: int) -> np.ndarray:
    """(C, h, w, r, r) replicate-extended neighborhoods."""
    pad = pad_chw(latent, r // 2, "replicate")
    return sliding_window_view(pad, (r, r), axis=(1, 2))


def diffusion_step(latent: LatentDepth, kernels: KernelField) -> LatentDepth:
    """One message-passing update: each value becomes its stencil-weighted window."""
    r = kernels.window
    lat = latent.data
    c, h, w = lat.shape
    if kernels.data.shape != (c, r * r, h, w):
        raise ShapeError(
            f"kernel field shape {kernels.data.shape} does not match latent {lat.shape}"
        )
    win = _latent_windows(lat, r)
    out = (win * kernels.arranged()).sum(axis=(3, 4))
    return LatentDepth(data=out)


def diffusion_step_backward(
    latent: np.ndarray, kernels: KernelField, g_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of diffusion_step w.r.t. the latent and the kernel field."""
    r = kernels.window
    c, h, w = latent.shape
    win = _latent_windows(latent, r)
    g_k = np.ascontiguousarray(
        (g_out[:, :, :, None, None] * win).transpose(0, 3, 4, 1, 2)
    ).reshape(c, r * r, h, w)
    kr = kernels.arranged()  # (C, h, w, r, r)
    p = r // 2
    g_pad = np.zeros((c, h + 2 * p, w + 2 * p), dtype=g_out.dtype)
    for a in range(r):
        for b in range(r):
            g_pad[:, a : a + h, b : b + w] += g_out * kr[:, :, :, a, b]
    g_latent = pad_transpose_chw(g_pad, p, "replicate", h, w)
    return g_latent, g_k


def num_steps(h: int, w: int, r: int) -> int:
    """Iterations needed for messages to cover the grid: ceil(max(h,w) / floor(r/2))."""
    if r % 2 == 0 or r < 3:
        raise ConfigError(f"window must be odd and >= 3, got {r}")
    return math.ceil(max(h, w) / (r // 2))


def diffuse(
    d: DepthMap, xh: np.ndarray, params: TxdParams, record_trace: bool = False
) -> EnhancedDepth:
    """Full diffusion pass: encode, predict kernels, iterate S steps.

    Kernels are predicted once and reused across all steps.
    """
    latent = encode_depth(d, params)
    kernels = predict_kernels(xh, params)
    h, w = latent.data.shape[1], latent.data.shape[2]
    steps = params.steps if isinstance(params.steps, int) else num_steps(h, w, params.window)
    trace: list[np.ndarray] | None = [latent.data.copy()] if record_trace else None
    for _ in range(steps):
        latent = diffusion_step(latent, kernels)
        if trace is not None:
            trace.append(latent.data.copy())
    return EnhancedDepth(latent=latent.data, steps_run=steps, trace=trace)


def project_and_upscale(
    e: EnhancedDepth, target_h: int, target_w: int, params: TxdParams
) -> np.ndarray:
    """Latent -> 3-channel map at the RGB resolution (conv then bilinear upscale)."""
    if params.projector.in_ch != e.latent.shape[0]:
        raise ConfigError(
            f"projector expects {params.projector.in_ch} channels, latent has "
            f"{e.latent.shape[0]}"
        )
    if params.projector.out_ch != 3:
        raise ConfigError("projector must map the latent to 3 channels")
    proj = conv2d(e.latent, params.projector)
    e.projected = resample(proj, target_h, target_w, method="bilinear")
    return e.projected
