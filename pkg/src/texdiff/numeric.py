"""Dense (C, H, W) tensor core: convolution, resampling, activations, softmax.

All operators are pure functions on numpy arrays in channel-major layout.
Batches are handled by callers as outer loops; there is no batch axis.
Every operator has a hand-written adjoint (``*_backward``) so composite
pipelines can be differentiated exactly without an autodiff framework.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when tensor shapes do not satisfy an operator's contract."""


class NumericalError(ValueError):
    """Raised when an operation produces or receives non-finite values."""


class ConfigError(ValueError):
    """Raised for invalid parameter/configuration values."""


def as_chw(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Validate a rank-3 (C, H, W) array with finite entries."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"{name}: expected rank-3 (C,H,W) array, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise NumericalError(f"{name}: contains non-finite values")
    return x


def check_finite(x: np.ndarray, name: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NumericalError(f"{name}: produced non-finite values")
    return x


@dataclass
class ConvParams:
    """Weights of one convolutional block.

    weight: (out_ch, in_ch, k, k), k odd.
    padding: "zero" or "replicate"; pad is the border size (usually k // 2).
    """

    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: str = "zero"
    pad: int = field(default=-1)

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        self.bias = np.asarray(self.bias)
        if self.weight.ndim != 4:
            raise ShapeError(f"conv weight must be rank-4, got shape {self.weight.shape}")
        out_ch, in_ch, kh, kw = self.weight.shape
        if kh != kw or kh % 2 == 0:
            raise ConfigError(f"kernel must be square with odd size, got {kh}x{kw}")
        if out_ch < 1 or in_ch < 1:
            raise ConfigError("out_ch and in_ch must be >= 1")
        if self.bias.shape != (out_ch,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match out_ch {out_ch}")
        if self.padding not in ("zero", "replicate"):
            raise ConfigError(f"unknown padding mode: {self.padding!r}")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.pad < 0:
            self.pad = kh // 2

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1]

    @property
    def k(self) -> int:
        return self.weight.shape[2]


def pad_chw(x: np.ndarray, p: int, mode: str) -> np.ndarray:
    """Pad the two spatial axes by p on each side."""
    if p == 0:
        return x
    c, h, w = x.shape
    out = np.zeros((c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    out[:, p : p + h, p : p + w] = x
    if mode == "replicate":
        out[:, :p, p : p + w] = x[:, :1, :]
        out[:, p + h :, p : p + w] = x[:, -1:, :]
        out[:, :, :p] = out[:, :, p : p + 1]
        out[:, :, p + w :] = out[:, :, p + w - 1 : p + w]
    return out


def pad_transpose_chw(g: np.ndarray, p: int, mode: str, h: int, w: int) -> np.ndarray:
    """Adjoint of pad_chw: fold padded-region gradients back onto the source."""
    if p == 0:
        return g
    if mode == "zero":
        return g[:, p : p + h, p : p + w]
    # replicate: each padded cell reads a clipped source index; accumulate.
    rows = np.clip(np.arange(-p, h + p), 0, h - 1)
    cols = np.clip(np.arange(-p, w + p), 0, w - 1)
    acc = np.zeros((g.shape[0], h, w), dtype=g.dtype)
    np.add.at(acc, (slice(None), rows[:, None], cols[None, :]), g)
    return acc


def _im2col(x: np.ndarray, params: ConvParams) -> tuple[np.ndarray, int, int]:
    """Contiguous (Ho*Wo, in_ch*k*k) patch matrix plus the output dims."""
    k, s = params.k, params.stride
    xp = pad_chw(x, params.pad, params.padding)
    if xp.shape[1] < k or xp.shape[2] < k:
        raise ShapeError(
            f"spatial dims {x.shape[1:]} too small for kernel {k} with pad {params.pad}"
        )
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
    ho, wo = win.shape[1], win.shape[2]
    col = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(ho * wo, -1)
    return col, ho, wo


def _check_conv_input(x: np.ndarray, params: ConvParams) -> np.ndarray:
    x = as_chw(x, "conv2d input")
    if x.shape[0] != params.in_ch:
        raise ShapeError(
            f"conv2d: input has {x.shape[0]} channels {x.shape}, "
            f"params expect {params.in_ch} {params.weight.shape}"
        )
    return x


def conv2d_with_cache(x: np.ndarray, params: ConvParams) -> tuple[np.ndarray, np.ndarray | None]:
    """conv2d that also returns its patch matrix for reuse in the backward pass."""
    x = _check_conv_input(x, params)
    if params.k == 1 and params.stride == 1 and params.pad == 0:
        out = np.tensordot(params.weight[:, :, 0, 0], x, axes=(1, 0))
        out += params.bias[:, None, None]
        return out, None
    col, ho, wo = _im2col(x, params)
    w_mat = params.weight.reshape(params.out_ch, -1)
    out = (col @ w_mat.T).T.reshape(params.out_ch, ho, wo)
    out += params.bias[:, None, None]
    return np.ascontiguousarray(out), col


def conv2d(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """2-D cross-correlation with bias, stride, and zero/replicate padding."""
    return conv2d_with_cache(x, params)[0]


def conv2d_backward(
    x: np.ndarray, params: ConvParams, g_out: np.ndarray, col: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d: (d_input, d_weight, d_bias) for upstream g_out.

    col, when given, must be the patch matrix from conv2d_with_cache.
    """
    k, s, p = params.k, params.stride, params.pad
    if k == 1 and s == 1 and p == 0:
        g_w = np.tensordot(g_out, x, axes=([1, 2], [1, 2]))[:, :, None, None]
        g_b = g_out.sum(axis=(1, 2))
        g_x = np.tensordot(params.weight[:, :, 0, 0], g_out, axes=(0, 0))
        return g_x, g_w, g_b
    if col is None:
        col, _, _ = _im2col(x, params)
    ho, wo = g_out.shape[1], g_out.shape[2]
    g_mat = g_out.reshape(params.out_ch, -1)
    g_w = (g_mat @ col).reshape(params.weight.shape)
    g_b = g_out.sum(axis=(1, 2))
    # d_input: scatter each kernel tap back through the stride/pad geometry.
    w_mat = params.weight.reshape(params.out_ch, -1)
    tmp = (w_mat.T @ g_mat).reshape(params.in_ch, k, k, ho, wo)
    h, w = x.shape[1], x.shape[2]
    g_pad = np.zeros((x.shape[0], h + 2 * p, w + 2 * p), dtype=g_out.dtype)
    for a in range(k):
        for b in range(k):
            g_pad[:, a : a + ho * s : s, b : b + wo * s : s] += tmp[:, a, b]
    g_x = pad_transpose_chw(g_pad, p, params.padding, h, w)
    return g_x, g_w, g_b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, g_out: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, g_out, 0.0)


@lru_cache(maxsize=256)
def _resample_matrix(n_in: int, n_out: int, method: str) -> np.ndarray:
    """(n_out, n_in) interpolation matrix; every row is convex (sums to 1)."""
    if n_out < 1:
        raise ConfigError(f"resample target dim must be >= 1, got {n_out}")
    m = np.zeros((n_out, n_in))
    if method == "bilinear":
        # align-corners: endpoints map onto endpoints
        if n_out == 1:
            src = np.array([(n_in - 1) / 2.0])
        else:
            src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        lo = np.clip(np.floor(src).astype(int), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        m[np.arange(n_out), lo] += 1.0 - frac
        m[np.arange(n_out), hi] += frac
    elif method == "nearest":
        src = np.minimum((np.floor((np.arange(n_out) + 0.5) * n_in / n_out)).astype(int), n_in - 1)
        m[np.arange(n_out), src] = 1.0
    elif method == "area":
        # exact box overlap between output cell [i, i+1) * n_in/n_out and input cells
        scale = n_in / n_out
        for i in range(n_out):
            left = i * scale
            right = (i + 1) * scale
            j0 = int(np.floor(left))
            j1 = min(int(np.ceil(right)), n_in)
            for j in range(j0, j1):
                overlap = min(right, j + 1) - max(left, j)
                if overlap > 0:
                    m[i, j] = overlap / scale
        m /= m.sum(axis=1, keepdims=True)
    else:
        raise ConfigError(f"unknown resample method: {method!r}")
    return m


def resample(x: np.ndarray, target_h: int, target_w: int, method: str = "bilinear") -> np.ndarray:
    """Resize (C, H, W) to (C, target_h, target_w).

    bilinear uses align-corners semantics; area averages exact box overlaps;
    nearest picks the half-pixel-centered source sample.
    """
    x = as_chw(x, "resample input")
    r = _resample_matrix(x.shape[1], target_h, method).astype(x.dtype, copy=False)
    c = _resample_matrix(x.shape[2], target_w, method).astype(x.dtype, copy=False)
    t = np.tensordot(r, x, axes=(1, 1))  # (th, C, W)
    out = np.tensordot(t, c, axes=(2, 1))  # (th, C, tw)
    return np.ascontiguousarray(out.transpose(1, 0, 2))


def resample_backward(
    g_out: np.ndarray, in_h: int, in_w: int, method: str = "bilinear"
) -> np.ndarray:
    """Adjoint of resample (a fixed linear map for given sizes/method)."""
    th, tw = g_out.shape[1], g_out.shape[2]
    r = _resample_matrix(in_h, th, method).astype(g_out.dtype, copy=False)
    c = _resample_matrix(in_w, tw, method).astype(g_out.dtype, copy=False)
    t = np.tensordot(r.T, g_out, axes=(1, 1))  # (H, C, tw)
    g_x = np.tensordot(t, c, axes=(2, 0))  # (H, C, W)
    return np.ascontiguousarray(g_x.transpose(1, 0, 2))


def softmax_axis(x: np.ndarray, axis: int) -> np.ndarray:
    """Softmax along one axis, stabilized by the running max (log-sum-exp).

    Shifted logits are floored just above the exp underflow threshold so the
    output stays strictly positive for arbitrarily wide logit ranges.
    """
    x = np.asarray(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of bounds for rank {x.ndim}")
    z = x - x.max(axis=axis, keepdims=True)
    floor = -708.0 if z.dtype == np.float64 else -87.0
    e = np.exp(np.maximum(z, floor))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_axis_backward(y: np.ndarray, g_out: np.ndarray, axis: int) -> np.ndarray:
    """Jacobian-vector product of softmax given its output y."""
    dot = (g_out * y).sum(axis=axis, keepdims=True)
    return y * (g_out - dot)


def channel_concat(inputs: list[np.ndarray]) -> np.ndarray:
    """Concatenate along the channel axis; inputs must share H and W."""
    if not inputs:
        raise ShapeError("channel_concat: empty input list")
    arrs = [as_chw(t, f"concat input {i}") for i, t in enumerate(inputs)]
    hw = arrs[0].shape[1:]
    for i, a in enumerate(arrs):
        if a.shape[1:] != hw:
            raise ShapeError(
                f"channel_concat: input {i} spatial dims {a.shape[1:]} != {hw}"
            )
    return np.concatenate(arrs, axis=0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def init_conv(
    rng: np.random.Generator,
    out_ch: int,
    in_ch: int,
    k: int,
    *,
    stride: int = 1,
    padding: str = "zero",
    weight_scale: float = 1.0,
    dtype=np.float64,
) -> ConvParams:
    """Centered-uniform fan-in initialization (He-style limit sqrt(6 / fan_in))."""
    fan_in = in_ch * k * k
    limit = np.sqrt(6.0 / fan_in) * weight_scale
    w = rng.uniform(-limit, limit, size=(out_ch, in_ch, k, k)).astype(dtype)
    b = np.zeros(out_ch, dtype=dtype)
    return ConvParams(weight=w, bias=b, stride=stride, padding=padding)
