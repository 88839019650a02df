"""Gradient verification and toy training.

finite_diff_grad is the oracle every hand-written backward pass is checked
against; the registry in GRADCHECKS builds one small seeded problem per
operator. train_toy optimizes the weighted loss on synthetic scenes with a
decoupled-weight-decay adaptive optimizer under a cosine schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .consistency import LossReport, SSIMParams, ssim, ssim_backward
from .diffusion import DepthMap, KernelField, LatentDepth, diffusion_step, diffusion_step_backward
from .fusion import SegPrediction, seg_loss, seg_loss_backward, sigmoid
from .numeric import (
    ConfigError,
    NumericalError,
    conv2d,
    conv2d_backward,
    init_conv,
    resample,
    resample_backward,
    softmax_axis,
    softmax_axis_backward,
)
from .pipeline import PipelineConfig, TexDiffPipeline

PASS_THRESHOLD = 1e-3
SMOOTH_THRESHOLD = 1e-4


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_err: float
    samples: int
    epsilon: float
    passed: bool
    threshold: float = PASS_THRESHOLD

    def __post_init__(self):
        if self.samples < 16:
            raise ConfigError(f"gradcheck needs >= 16 samples, got {self.samples}")
        if not 1e-7 <= self.epsilon <= 1e-3:
            raise ConfigError(f"epsilon {self.epsilon} outside [1e-7, 1e-3]")

    def row(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"{self.op_name:<24} max_rel_err={self.max_rel_err:.3e} "
            f"samples={self.samples:<5d} eps={self.epsilon:.0e} "
            f"threshold={self.threshold:.0e} [{status}]"
        )


def finite_diff_grad(
    loss_fn: Callable[[np.ndarray], float],
    x: np.ndarray,
    epsilon: float = 1e-5,
    coords: list[int] | None = None,
) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    With coords given, only those flat indices are evaluated (the rest of
    the returned array stays zero).
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    work = x.copy()
    idx = range(x.size) if coords is None else coords
    for i in idx:
        orig = work.flat[i]
        work.flat[i] = orig + epsilon
        f_hi = float(loss_fn(work))
        work.flat[i] = orig - epsilon
        f_lo = float(loss_fn(work))
        work.flat[i] = orig
        if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
            raise NumericalError(f"loss not finite near coordinate {i}")
        grad.flat[i] = (f_hi - f_lo) / (2.0 * epsilon)
    return grad


def max_relative_error(
    analytic: np.ndarray, numeric: np.ndarray, coords: list[int] | None = None
) -> float:
    """max |a - f| / max(|a|, |f|, floor); the floor absorbs near-zero entries."""
    a = np.asarray(analytic).ravel()
    f = np.asarray(numeric).ravel()
    if coords is not None:
        a = a[coords]
        f = f[coords]
    floor = 1e-5 * max(1.0, float(np.abs(a).max(initial=0)), float(np.abs(f).max(initial=0)))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    return float((np.abs(a - f) / denom).max())


def _report(name, analytic, numeric, eps, threshold, coords=None) -> GradCheckReport:
    err = max_relative_error(analytic, numeric, coords)
    n = len(coords) if coords is not None else int(np.asarray(analytic).size)
    return GradCheckReport(
        op_name=name, max_rel_err=err, samples=n, epsilon=eps,
        passed=err <= threshold, threshold=threshold,
    )


# -- per-operator checks ---------------------------------------------------

def check_conv2d(seed: int = 0) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    eps = 1e-5
    reports = []
    for tag, stride, padding in (("zero/s1", 1, "zero"), ("replicate/s2", 2, "replicate")):
        x = rng.standard_normal((2, 7, 7))
        p = init_conv(rng, 3, 2, 3, stride=stride, padding=padding)
        p.weight[...] = rng.standard_normal(p.weight.shape)
        p.bias[...] = rng.standard_normal(p.bias.shape)
        v = rng.standard_normal(conv2d(x, p).shape)
        g_x, g_w, g_b = conv2d_backward(x, p, v)
        fd_x = finite_diff_grad(lambda t: float((conv2d(t, p) * v).sum()), x, eps)

        def loss_w(w, p=p, x=x, v=v):
            q = init_conv(np.random.default_rng(0), *p.weight.shape[:2], p.k,
                          stride=p.stride, padding=p.padding)
            q.weight[...] = w
            q.bias[...] = p.bias
            return float((conv2d(x, q) * v).sum())

        fd_w = finite_diff_grad(loss_w, p.weight, eps)
        reports.append(_report(f"conv2d[{tag}].input", g_x, fd_x, eps, PASS_THRESHOLD))
        reports.append(_report(f"conv2d[{tag}].weight", g_w, fd_w, eps, PASS_THRESHOLD))
        assert np.allclose(g_b, v.sum(axis=(1, 2)))
    return reports


def check_diffusion_step(seed: int = 0) -> list[GradCheckReport]:
    """Single step and a 3-step unroll, w.r.t. both the latent and the logits."""
    rng = np.random.default_rng(seed)
    eps = 1e-5
    r, c, h, w = 3, 2, 6, 6
    lat = rng.standard_normal((c, h, w))
    logits = rng.standard_normal((c, r * r, h, w))
    v = rng.standard_normal((c, h, w))

    def run(lat0, logit_field, steps):
        kf = KernelField(data=softmax_axis(logit_field, axis=1), window=r)
        cur = LatentDepth(data=lat0)
        cache = [cur.data]
        for _ in range(steps):
            cur = diffusion_step(cur, kf)
            cache.append(cur.data)
        return cur.data, kf, cache

    reports = []
    for steps, tag in ((1, "1-step"), (3, "unrolled-3")):
        out, kf, cache = run(lat, logits, steps)
        d_lat = v
        d_kdata = np.zeros_like(kf.data)
        for s in reversed(range(steps)):
            d_lat, d_k = diffusion_step_backward(cache[s], kf, d_lat)
            d_kdata += d_k
        d_logits = softmax_axis_backward(kf.data, d_kdata, axis=1)
        fd_lat = finite_diff_grad(
            lambda t: float((run(t, logits, steps)[0] * v).sum()), lat, eps
        )
        fd_logits = finite_diff_grad(
            lambda t: float((run(lat, t, steps)[0] * v).sum()),
            logits,
            eps,
            coords=list(rng.choice(logits.size, size=48, replace=False)),
        )
        coords = list(np.flatnonzero(fd_logits.ravel()))
        reports.append(_report(f"diffusion_step[{tag}].latent", d_lat, fd_lat, eps, PASS_THRESHOLD))
        reports.append(
            _report(f"diffusion_step[{tag}].kernels", d_logits, fd_logits, eps,
                    PASS_THRESHOLD, coords=coords)
        )
    return reports


def check_softmax(seed: int = 0) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    eps = 1e-5
    x = rng.standard_normal((4, 9)) * 3.0
    v = rng.standard_normal(x.shape)
    y = softmax_axis(x, axis=1)
    g = softmax_axis_backward(y, v, axis=1)
    fd = finite_diff_grad(lambda t: float((softmax_axis(t, axis=1) * v).sum()), x, eps)
    return [_report("softmax_axis", g, fd, eps, SMOOTH_THRESHOLD)]


def check_resample(seed: int = 0) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    eps = 1e-5
    reports = []
    for method in ("bilinear", "area", "nearest"):
        x = rng.standard_normal((2, 5, 7))
        v = rng.standard_normal((2, 8, 4))
        g = resample_backward(v, 5, 7, method=method)
        fd = finite_diff_grad(
            lambda t: float((resample(t, 8, 4, method=method) * v).sum()), x, eps
        )
        reports.append(_report(f"resample[{method}]", g, fd, eps, PASS_THRESHOLD))
    return reports


def check_ssim(seed: int = 0) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    eps = 1e-5
    p = SSIMParams()
    a = rng.uniform(0.0, 1.0, size=(3, 12, 12))
    b = rng.uniform(0.0, 1.0, size=(3, 12, 12))
    g = ssim_backward(a, b, p)
    fd = finite_diff_grad(lambda t: ssim(t, b, p), a, eps)
    return [_report("ssim", g, fd, eps, SMOOTH_THRESHOLD)]


def check_bce(seed: int = 0) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    eps = 1e-5
    z = rng.standard_normal((1, 8, 8)) * 3.0
    gt = (rng.uniform(size=(1, 8, 8)) > 0.5).astype(np.float64)

    def loss(t):
        return seg_loss(SegPrediction(logits=t, probabilities=sigmoid(t)), gt)

    g = seg_loss_backward(SegPrediction(logits=z, probabilities=sigmoid(z)), gt)
    fd = finite_diff_grad(loss, z, eps)
    return [_report("bce", g, fd, eps, SMOOTH_THRESHOLD)]


def check_end_to_end(seed: int = 0, coords_per_tensor: int = 2) -> list[GradCheckReport]:
    """Sampled finite-difference check of the full weighted loss at 32x32."""
    rng = np.random.default_rng(seed)
    eps = 1e-5
    scene = synth_scenes(seed, 1, 32)[0]
    model = TexDiffPipeline(PipelineConfig(seed=seed), 32, 32)
    for arr in model.parameters().values():
        arr += rng.normal(0.0, 0.05, size=arr.shape)  # wake up zero-initialized paths
    model.forward(scene.rgb, scene.depth.data, scene.mask)
    grads = model.backward()
    params = model.parameters()

    analytic, numeric = [], []
    for name in sorted(params):
        arr = params[name]
        n = min(coords_per_tensor, arr.size)
        coords = rng.choice(arr.size, size=n, replace=False)
        for i in coords:
            orig = arr.flat[i]
            arr.flat[i] = orig + eps
            f_hi = model.forward(scene.rgb, scene.depth.data, scene.mask)["report"].l_total
            arr.flat[i] = orig - eps
            f_lo = model.forward(scene.rgb, scene.depth.data, scene.mask)["report"].l_total
            arr.flat[i] = orig
            numeric.append((f_hi - f_lo) / (2 * eps))
            analytic.append(grads[name].flat[i])
    return [
        _report(
            "end_to_end", np.array(analytic), np.array(numeric), eps, PASS_THRESHOLD
        )
    ]


GRADCHECKS: dict[str, Callable[[int], list[GradCheckReport]]] = {
    "conv2d": check_conv2d,
    "diffusion_step": check_diffusion_step,
    "softmax_axis": check_softmax,
    "resample": check_resample,
    "ssim": check_ssim,
    "bce": check_bce,
    "end_to_end": check_end_to_end,
}


def run_gradchecks(which: str = "all", seed: int = 0) -> list[GradCheckReport]:
    names = list(GRADCHECKS) if which == "all" else [which]
    reports = []
    for name in names:
        if name not in GRADCHECKS:
            raise ConfigError(f"unknown gradcheck {name!r}; known: {sorted(GRADCHECKS)}")
        reports.extend(GRADCHECKS[name](seed))
    return reports


# -- optimizer -------------------------------------------------------------

class AdamW:
    """Adaptive moments with decoupled weight decay.

    Parameters are updated in sorted-name order for determinism. A zero
    gradient leaves a parameter unchanged apart from the decay term.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float = 5e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.1,
    ):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        lr_t = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        scale = lr_t * np.sqrt(bc2) / bc1
        for name in sorted(self.params):
            p = self.params[name]
            g = grads[name]
            m, v = self.m[name], self.v[name]
            p *= 1.0 - lr_t * self.weight_decay
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            denom = np.sqrt(v)
            denom += self.eps * np.sqrt(bc2)
            p -= scale * m / denom


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine annealing from base_lr to 0 over total_steps."""
    if total_steps <= 1:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


# -- synthetic scenes ------------------------------------------------------

@dataclass
class SyntheticScene:
    rgb: np.ndarray  # (3, H, W) in [0, 1]
    depth: DepthMap
    mask: np.ndarray  # (1, H, W) binary
    seed: int


def _smooth_field(rng: np.random.Generator, size: int, cells: int = 4) -> np.ndarray:
    coarse = rng.uniform(0.0, 1.0, size=(1, cells, cells))
    return resample(coarse, size, size, method="bilinear")[0]


def _convex_polygon_mask(size: int, verts: np.ndarray) -> np.ndarray:
    """Rasterize a convex CCW polygon by half-plane tests on pixel centers."""
    yy, xx = np.mgrid[0:size, 0:size]
    inside = np.ones((size, size), dtype=bool)
    n = len(verts)
    for i in range(n):
        y0, x0 = verts[i]
        y1, x1 = verts[(i + 1) % n]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        inside &= cross >= 0
    return inside


def _ellipse_mask(size: int, rng: np.random.Generator) -> np.ndarray:
    cy, cx = rng.uniform(0.3 * size, 0.7 * size, size=2)
    ry = rng.uniform(0.12 * size, 0.35 * size)
    rx = rng.uniform(0.12 * size, 0.35 * size)
    phi = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    u = dy * np.cos(phi) + dx * np.sin(phi)
    t = -dy * np.sin(phi) + dx * np.cos(phi)
    return (u / ry) ** 2 + (t / rx) ** 2 <= 1.0


def _polygon_mask(size: int, rng: np.random.Generator) -> np.ndarray:
    n = int(rng.integers(3, 7))
    cy, cx = rng.uniform(0.35 * size, 0.65 * size, size=2)
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
    radius = rng.uniform(0.15 * size, 0.4 * size)
    verts = np.stack(
        [cy + radius * np.sin(angles), cx + radius * np.cos(angles)], axis=1
    )
    hull = _convex_hull(verts)
    return _convex_polygon_mask(size, hull)


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns CCW hull vertices in (y, x)."""
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.asarray(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1])


def synth_scenes(seed: int, n: int, size: int) -> list[SyntheticScene]:
    """Deterministic synthetic RGB/depth/mask triples.

    Each scene has a smooth textured background and one ellipse or convex
    polygon foreground with distinct texture and strictly closer (higher)
    depth. Mask area is rejected outside [5%, 60%] of the image.
    """
    if size < 32:
        raise ConfigError(f"scene size must be >= 32, got {size}")
    rng = np.random.default_rng(seed)
    scenes = []
    for k in range(n):
        while True:
            shape = _ellipse_mask(size, rng) if rng.uniform() < 0.5 else _polygon_mask(size, rng)
            frac = shape.mean()
            if 0.05 <= frac <= 0.60:
                break
        bg_depth = 0.1 + 0.3 * _smooth_field(rng, size, cells=3)
        fg_depth = rng.uniform(0.65, 0.9)
        m = shape[None].astype(np.float64)
        depth = np.clip(bg_depth * (1.0 - m[0]) + fg_depth * m[0], 0.0, 1.0)

        # depth-shaded background: nearer surfaces render brighter
        base = rng.uniform(0.15, 0.35, size=(3, 1, 1))
        gain = rng.uniform(0.4, 0.9, size=(3, 1, 1))
        bg = base + gain * (bg_depth - 0.1)[None]
        fg_color = base + gain * (fg_depth - 0.1) + rng.uniform(-0.1, 0.1, size=(3, 1, 1))
        yy, xx = np.mgrid[0:size, 0:size]
        freq = rng.uniform(0.4, 0.8)
        pattern = 0.03 * np.sin(2 * np.pi * freq * xx / 12.0) * np.cos(
            2 * np.pi * freq * yy / 12.0
        )
        fg = np.clip(fg_color + pattern[None], 0.0, 1.0)
        rgb = np.clip(bg * (1.0 - m) + fg * m, 0.0, 1.0)
        scenes.append(
            SyntheticScene(
                rgb=rgb,
                depth=DepthMap(data=depth[None], source="synthetic"),
                mask=m,
                seed=seed + k,
            )
        )
    return scenes


# -- toy training ----------------------------------------------------------

@dataclass
class ToyTrainConfig:
    n_scenes: int = 8
    size: int = 32
    steps: int = 200
    lr: float = 5e-4
    lam: float = 0.02
    seed: int = 0
    weight_decay: float = 0.1
    sc_backward: bool = True
    fusion: str = "add"


@dataclass
class ToyTrainResult:
    losses: list[LossReport]
    model: TexDiffPipeline
    param_trace: list[np.ndarray] = field(default_factory=list)


def train_toy(config: ToyTrainConfig, trace_params: bool = False) -> ToyTrainResult:
    """Optimize the full weighted loss on synthetic scenes.

    Returns the per-step loss series (means over the scene batch). Diverging
    (non-finite) losses abort with the offending step index.
    """
    if config.size % 16 != 0:
        raise ConfigError("scene size must be divisible by 16")
    scenes = synth_scenes(config.seed, config.n_scenes, config.size)
    cfg = PipelineConfig(lam=config.lam, seed=config.seed, fusion=config.fusion)
    model = TexDiffPipeline(cfg, config.size, config.size)
    params = model.parameters()
    opt = AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    losses: list[LossReport] = []
    trace: list[np.ndarray] = []
    for step in range(config.steps):
        total = {k: np.zeros_like(v) for k, v in params.items()}
        sc_sum = seg_sum = 0.0
        for scene in scenes:
            out = model.forward(scene.rgb, scene.depth.data, scene.mask)
            sc_sum += out["report"].l_sc
            seg_sum += out["report"].l_seg
            g = model.backward(sc_backward=config.sc_backward)
            for k in total:
                total[k] += g[k]
        n = len(scenes)
        for k in total:
            total[k] /= n
        report = LossReport(l_sc=sc_sum / n, l_seg=seg_sum / n, lam=config.lam)
        if not math.isfinite(report.l_total):
            raise NumericalError(f"training diverged at step {step}")
        losses.append(report)
        opt.step(total, lr=cosine_lr(config.lr, step, config.steps))
        if trace_params:
            trace.append(
                np.concatenate([params[k].ravel().copy() for k in sorted(params)])
            )
    return ToyTrainResult(losses=losses, model=model, param_trace=trace)
