"""Depth integration: joint input, stand-in embedding backbone, decoder to a
single joint embedding, per-layer adaptors, additive injection, and a toy
segmentation head with its pixelwise cross-entropy loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import (
    ConfigError,
    ConvParams,
    ShapeError,
    as_chw,
    channel_concat,
    conv2d,
    init_conv,
    relu,
    resample,
    sigmoid,
)

N_STAGES = 4


@dataclass
class StageOutputs:
    """Ordered stage outputs at strictly decreasing spatial resolutions."""

    stages: list[np.ndarray]

    def __post_init__(self):
        if len(self.stages) != N_STAGES:
            raise ConfigError(f"expected {N_STAGES} stages, got {len(self.stages)}")
        for i in range(1, N_STAGES):
            prev, cur = self.stages[i - 1].shape, self.stages[i].shape
            if not (cur[1] < prev[1] and cur[2] < prev[2]):
                raise ShapeError(
                    f"stage {i} resolution {cur[1:]} not strictly below {prev[1:]}"
                )


@dataclass
class AdaptorLayer:
    """One adaptor: conv+ReLU stack ending at the target channel count, then
    a bilinear resize to the target layer's spatial dims."""

    target_channels: int
    target_h: int
    target_w: int
    convs: list[ConvParams]

    def __post_init__(self):
        if self.convs[-1].out_ch != self.target_channels:
            raise ConfigError(
                f"adaptor ends at {self.convs[-1].out_ch} channels, "
                f"target is {self.target_channels}"
            )


@dataclass
class AdaptorSpec:
    layers: list[AdaptorLayer]

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ConfigError("adaptor spec needs at least one layer")


@dataclass
class SegPrediction:
    logits: np.ndarray  # (1, H, W)
    probabilities: np.ndarray  # sigmoid(logits), strictly inside (0, 1)


def joint_input(d_u: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Element-wise addition of the projected depth and the RGB image."""
    d_u = as_chw(d_u, "joint_input d_u")
    x = as_chw(x, "joint_input x")
    if d_u.shape != x.shape:
        raise ShapeError(f"joint_input: shapes differ, {d_u.shape} vs {x.shape}")
    return d_u + x


def fuse_inputs(d_u: np.ndarray, x: np.ndarray, manner: str = "add") -> np.ndarray:
    """Fusion-manner variants: add (default), hadamard product, channel concat."""
    if manner == "add":
        return joint_input(d_u, x)
    if manner == "hadamard":
        if d_u.shape != x.shape:
            raise ShapeError(f"fuse_inputs: shapes differ, {d_u.shape} vs {x.shape}")
        return d_u * x
    if manner == "concat":
        return channel_concat([d_u, x])
    raise ConfigError(f"unknown fusion manner {manner!r}")


def default_stage_params(
    rng: np.random.Generator,
    in_ch: int,
    widths: tuple[int, ...] = (16, 32, 64, 128),
    dtype=np.float64,
) -> list[ConvParams]:
    """Stride-2 3x3 convs, one per stage."""
    params = []
    prev = in_ch
    for w in widths:
        params.append(init_conv(rng, w, prev, 3, stride=2, dtype=dtype))
        prev = w
    return params


def embed_backbone(z: np.ndarray, stage_params: list[ConvParams]) -> StageOutputs:
    """4-stage embedding: stride-2 conv + ReLU per stage (strides 2/4/8/16)."""
    z = as_chw(z, "embed input")
    if z.shape[1] % 16 != 0 or z.shape[2] % 16 != 0:
        raise ShapeError(
            f"embed_backbone needs H, W divisible by 16, got {z.shape[1:]}"
        )
    if len(stage_params) != N_STAGES:
        raise ConfigError(f"expected {N_STAGES} stage params, got {len(stage_params)}")
    outs = []
    cur = z
    for p in stage_params:
        cur = relu(conv2d(cur, p))
        outs.append(cur)
    return StageOutputs(stages=outs)


@dataclass
class DecoderParams:
    """Per-stage projection convs plus the final fusion conv.

    Stage outputs are upscaled to the first stage's resolution, projected,
    concatenated in stage order, and fused into the joint embedding E.
    """

    stage_convs: list[ConvParams]
    fusion: ConvParams

    def __post_init__(self):
        if len(self.stage_convs) != N_STAGES:
            raise ConfigError(f"decoder needs {N_STAGES} stage convs")


def default_decoder_params(
    rng: np.random.Generator,
    stage_widths: tuple[int, ...] = (16, 32, 64, 128),
    branch_ch: int = 32,
    embed_ch: int = 32,
    dtype=np.float64,
) -> DecoderParams:
    convs = [init_conv(rng, branch_ch, w, 1, dtype=dtype) for w in stage_widths]
    fusion = init_conv(rng, embed_ch, branch_ch * N_STAGES, 3, dtype=dtype)
    return DecoderParams(stage_convs=convs, fusion=fusion)


def decode_embedding(stages: StageOutputs, params: DecoderParams) -> np.ndarray:
    """Stage outputs -> joint embedding E at the stage-1 resolution."""
    th, tw = stages.stages[0].shape[1], stages.stages[0].shape[2]
    branches = []
    for o, p in zip(stages.stages, params.stage_convs):
        if o.shape[0] != p.in_ch:
            raise ConfigError(
                f"decoder conv expects {p.in_ch} channels, stage has {o.shape[0]}"
            )
        branches.append(conv2d(resample(o, th, tw, method="bilinear"), p))
    return conv2d(channel_concat(branches), params.fusion)


def default_adaptor_spec(
    rng: np.random.Generator,
    embed_ch: int,
    targets: list[tuple[int, int, int]],
    hidden: int = 32,
    dtype=np.float64,
) -> AdaptorSpec:
    """One adaptor per host layer: 1x1 conv, ReLU, 3x3 conv to target channels.

    The output conv starts at zero so injection begins as an exact no-op on
    the host network and ramps up as the adaptors train.
    """
    layers = []
    for (tc, th, tw) in targets:
        out_conv = init_conv(rng, tc, hidden, 3, dtype=dtype)
        out_conv.weight[...] = 0.0
        convs = [init_conv(rng, hidden, embed_ch, 1, dtype=dtype), out_conv]
        layers.append(AdaptorLayer(target_channels=tc, target_h=th, target_w=tw, convs=convs))
    return AdaptorSpec(layers=layers)


def adapt(e: np.ndarray, spec: AdaptorSpec) -> list[np.ndarray]:
    """Layer-specific embeddings: conv+ReLU stack, then resize to each target."""
    e = as_chw(e, "joint embedding")
    outs = []
    for layer in spec.layers:
        cur = e
        for i, p in enumerate(layer.convs):
            if i > 0:
                cur = relu(cur)
            cur = conv2d(cur, p)
        if cur.shape[0] != layer.target_channels:
            raise ShapeError(
                f"adaptor produced {cur.shape[0]} channels, "
                f"target is {layer.target_channels}"
            )
        outs.append(resample(cur, layer.target_h, layer.target_w, method="bilinear"))
    return outs


def inject(x_i: np.ndarray, e_i: np.ndarray) -> np.ndarray:
    """Additive injection into a host layer input; host parameters untouched."""
    if x_i.shape != e_i.shape:
        raise ShapeError(f"inject: shapes differ, {x_i.shape} vs {e_i.shape}")
    return x_i + e_i


def seg_head(features: np.ndarray, head: ConvParams, out_h: int, out_w: int) -> SegPrediction:
    """1x1 conv to one logit channel, bilinear upscale to the output size."""
    features = as_chw(features, "head features")
    logits_small = conv2d(features, head)
    if logits_small.shape[0] != 1:
        raise ConfigError("segmentation head must produce 1 channel")
    logits = resample(logits_small, out_h, out_w, method="bilinear")
    return SegPrediction(logits=logits, probabilities=sigmoid(logits))


def seg_loss(pred: SegPrediction, gt: np.ndarray) -> float:
    """Mean binary cross-entropy on logits (log-sum-exp stabilized)."""
    gt = as_chw(gt, "seg gt")
    z = pred.logits
    if z.shape != gt.shape:
        raise ShapeError(f"seg_loss: shapes differ, {z.shape} vs {gt.shape}")
    if not np.isin(gt, (0.0, 1.0)).all():
        raise ConfigError("seg_loss: ground truth must be binary {0, 1}")
    # per-pixel: max(z, 0) - z*t + log(1 + exp(-|z|))
    per = np.maximum(z, 0.0) - z * gt + np.log1p(np.exp(-np.abs(z)))
    return float(per.mean())


def seg_loss_backward(pred: SegPrediction, gt: np.ndarray, g: float = 1.0) -> np.ndarray:
    """Gradient of seg_loss with respect to the logits."""
    return g * (sigmoid(pred.logits) - gt) / gt.size
