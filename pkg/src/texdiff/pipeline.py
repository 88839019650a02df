"""End-to-end composition of the texture/diffusion/fusion stages into one
differentiable model with an explicit parameter registry.

The forward pass stashes every intermediate needed by the hand-written
backward pass; backward() replays the chain in reverse and returns a
gradient for every registered parameter tensor. Depth handling is selectable
so ablation rows (no depth, raw depth, diffused depth) share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fusion
from .consistency import SSIMParams, sc_loss, sc_loss_backward, total_loss
from .diffusion import (
    EnhancedDepth,
    KernelField,
    LatentDepth,
    TxdParams,
    default_txd_params,
    diffusion_step,
    diffusion_step_backward,
    num_steps,
)
from .numeric import (
    ConfigError,
    ConvParams,
    conv2d,
    conv2d_backward,
    conv2d_with_cache,
    relu,
    relu_backward,
    resample,
    resample_backward,
    softmax_axis,
    softmax_axis_backward,
)
from .texture import TexConfig, extract_texture

DEPTH_MODES = ("txd", "raw", "none", "off")
STAGE_WIDTHS = (16, 32, 64, 128)
EMBED_CH = 32
BRANCH_CH = 32
ADAPTOR_HIDDEN = 32


@dataclass
class PipelineConfig:
    """Resolved run configuration for one model instance."""

    alpha: float = 0.3
    texture_size: tuple[int, int] = (12, 12)
    latent_dim: int = 24
    kernel: int = 7
    steps: int | str = "auto"
    lam: float = 0.02
    fusion: str = "add"
    seed: int = 0
    depth_mode: str = "txd"  # txd | raw | none | off

    def __post_init__(self):
        if self.fusion not in ("add", "hadamard", "concat"):
            raise ConfigError(f"unknown fusion manner {self.fusion!r}")
        if self.depth_mode not in DEPTH_MODES:
            raise ConfigError(f"unknown depth mode {self.depth_mode!r}")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")


class TexDiffPipeline:
    """Differentiable desk-scale pipeline for a fixed input resolution."""

    def __init__(self, cfg: PipelineConfig, height: int, width: int, dtype=np.float64):
        if height % 16 != 0 or width % 16 != 0:
            raise ConfigError(f"input dims must be divisible by 16, got {height}x{width}")
        self.cfg = cfg
        self.height = height
        self.width = width
        self.dtype = dtype
        rng = np.random.default_rng(cfg.seed)
        self.tex_cfg = TexConfig(
            alpha=cfg.alpha, target_h=cfg.texture_size[0], target_w=cfg.texture_size[1]
        )
        self.ssim_params = SSIMParams()
        self.txd: TxdParams = default_txd_params(
            rng,
            latent_dim=cfg.latent_dim,
            window=cfg.kernel,
            steps=cfg.steps,
            latent_hw=cfg.texture_size,
            dtype=dtype,
        )
        embed_in = 6 if cfg.fusion == "concat" and cfg.depth_mode in ("txd", "raw") else 3
        self.embed_stages = fusion.default_stage_params(rng, embed_in, STAGE_WIDTHS, dtype=dtype)
        self.decoder = fusion.default_decoder_params(
            rng, STAGE_WIDTHS, branch_ch=BRANCH_CH, embed_ch=EMBED_CH, dtype=dtype
        )
        # adaptor targets: the host stage inputs (RGB plus each stage's output)
        targets = [(3, height, width)]
        for i, w in enumerate(STAGE_WIDTHS[:-1]):
            targets.append((w, height >> (i + 1), width >> (i + 1)))
        self.adaptors = fusion.default_adaptor_spec(
            rng, EMBED_CH, targets, hidden=ADAPTOR_HIDDEN, dtype=dtype
        )
        self.host_stages = fusion.default_stage_params(rng, 3, STAGE_WIDTHS, dtype=dtype)
        self.head = fusion.ConvParams(
            weight=rng.uniform(-0.25, 0.25, size=(1, STAGE_WIDTHS[-1], 1, 1)).astype(dtype),
            bias=np.zeros(1, dtype=dtype),
        )
        self._cache: dict | None = None

    # -- parameter registry ------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references to every trainable array, keyed by path."""
        out: dict[str, np.ndarray] = {}

        def add(prefix: str, p: ConvParams):
            out[f"{prefix}.weight"] = p.weight
            out[f"{prefix}.bias"] = p.bias

        for i, p in enumerate(self.txd.encoder):
            add(f"txd.encoder.{i}", p)
        for i, p in enumerate(self.txd.predictor):
            add(f"txd.predictor.{i}", p)
        add("txd.projector", self.txd.projector)
        for i, p in enumerate(self.embed_stages):
            add(f"embed.{i}", p)
        for i, p in enumerate(self.decoder.stage_convs):
            add(f"decoder.stage.{i}", p)
        add("decoder.fusion", self.decoder.fusion)
        for i, layer in enumerate(self.adaptors.layers):
            for j, p in enumerate(layer.convs):
                add(f"adaptor.{i}.{j}", p)
        for i, p in enumerate(self.host_stages):
            add(f"host.{i}", p)
        add("head", self.head)
        return out

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        for name, arr in values.items():
            if name not in params:
                raise ConfigError(f"unknown parameter {name!r}")
            if params[name].shape != arr.shape:
                raise ConfigError(
                    f"parameter {name}: shape {arr.shape} != expected {params[name].shape}"
                )
            params[name][...] = arr.astype(self.dtype)

    def zero_adaptors(self) -> None:
        for layer in self.adaptors.layers:
            for p in layer.convs:
                p.weight[...] = 0.0
                p.bias[...] = 0.0

    # -- forward -----------------------------------------------------------

    def forward(
        self, rgb: np.ndarray, depth: np.ndarray | None, gt: np.ndarray | None = None
    ) -> dict:
        """Run the pipeline; returns a cache dict with outputs and intermediates.

        Keys of interest: "pred" (SegPrediction), "d_u", "texture",
        "enhanced" (EnhancedDepth), "report" (LossReport, when gt given).
        """
        cfg = self.cfg
        rgb = np.ascontiguousarray(rgb, dtype=self.dtype)
        c: dict = {"rgb": rgb, "mode": cfg.depth_mode, "cols": {}}
        mode = cfg.depth_mode
        if mode in ("txd", "raw") and depth is None:
            raise ConfigError(f"depth mode {mode!r} requires a depth map")

        d_u = None
        if mode == "txd":
            depth = np.ascontiguousarray(depth, dtype=self.dtype)
            c["depth"] = depth
            c["texture"] = extract_texture(rgb, self.tex_cfg).astype(self.dtype)
            d_u = self._txd_forward(c)
        elif mode == "raw":
            depth = np.ascontiguousarray(depth, dtype=self.dtype)
            d_u = np.repeat(depth, 3, axis=0)
            c["d_u"] = d_u

        if d_u is not None:
            c["l_sc"] = sc_loss(d_u, rgb, self.ssim_params) if mode == "txd" else 0.0
        else:
            c["l_sc"] = 0.0

        if mode == "off":
            z = None
        elif mode == "none":
            z = rgb
        else:
            z = fusion.fuse_inputs(d_u, rgb, cfg.fusion)
        c["z"] = z

        injections = None
        if z is not None:
            self._jeb_forward(c, z)
            injections = c["e_list"]
        self._host_forward(c, injections)

        if gt is not None:
            gt = np.ascontiguousarray(gt, dtype=self.dtype)
            c["gt"] = gt
            c["l_seg"] = fusion.seg_loss(c["pred"], gt)
            lam = cfg.lam if mode == "txd" else 0.0
            c["report"] = total_loss(c["l_sc"], c["l_seg"], lam)
        self._cache = c
        return c

    def _conv(self, c: dict, key: str, x: np.ndarray, p: ConvParams) -> np.ndarray:
        out, col = conv2d_with_cache(x, p)
        c["cols"][key] = col
        return out

    def _txd_forward(self, c: dict) -> np.ndarray:
        txd = self.txd
        enc0_out = self._conv(c, "enc0", c["depth"], txd.encoder[0])
        enc1_in = relu(enc0_out)
        enc1_out = self._conv(c, "enc1", enc1_in, txd.encoder[1])
        h, w = txd.latent_hw
        lat0 = resample(enc1_out, h, w, method="area")
        c.update(enc0_out=enc0_out, enc1_in=enc1_in, enc1_out=enc1_out)

        pred0_out = self._conv(c, "pred0", c["texture"], txd.predictor[0])
        pred1_in = relu(pred0_out)
        logits = self._conv(c, "pred1", pred1_in, txd.predictor[1])
        r2 = txd.window**2
        grouped = logits.reshape(txd.latent_dim, r2, h, w)
        kdata = softmax_axis(grouped, axis=1)
        kernels = KernelField(data=kdata, window=txd.window)
        c.update(pred0_out=pred0_out, pred1_in=pred1_in, kernels=kernels)

        steps = txd.steps if isinstance(txd.steps, int) else num_steps(h, w, txd.window)
        lats = [lat0]
        cur = LatentDepth(data=lat0)
        for _ in range(steps):
            cur = diffusion_step(cur, kernels)
            lats.append(cur.data)
        c["lats"] = lats
        c["enhanced"] = EnhancedDepth(latent=cur.data, steps_run=steps)

        proj_out = conv2d(cur.data, txd.projector)
        d_u = resample(proj_out, self.height, self.width, method="bilinear")
        c["enhanced"].projected = d_u
        c.update(proj_out=proj_out, d_u=d_u)
        return d_u

    def _jeb_forward(self, c: dict, z: np.ndarray) -> None:
        stage_in, stage_pre, stage_out = [], [], []
        cur = z
        for i, p in enumerate(self.embed_stages):
            stage_in.append(cur)
            pre = self._conv(c, f"embed{i}", cur, p)
            cur = relu(pre)
            stage_pre.append(pre)
            stage_out.append(cur)
        stages = fusion.StageOutputs(stages=stage_out)
        th, tw = stage_out[0].shape[1], stage_out[0].shape[2]
        ups = [resample(o, th, tw, method="bilinear") for o in stage_out]
        branches = [
            self._conv(c, f"dec{i}", u, p)
            for i, (u, p) in enumerate(zip(ups, self.decoder.stage_convs))
        ]
        cat = fusion.channel_concat(branches)
        embedding = self._conv(c, "fusion", cat, self.decoder.fusion)
        c.update(
            stage_in=stage_in, stage_pre=stage_pre, stage_out=stage_out,
            stages=stages, ups=ups, branches=branches, cat=cat, embedding=embedding,
        )

        e_list, ad_cache = [], []
        for i, layer in enumerate(self.adaptors.layers):
            a0_out = self._conv(c, f"ad{i}a", embedding, layer.convs[0])
            a1_in = relu(a0_out)
            a1_out = self._conv(c, f"ad{i}b", a1_in, layer.convs[1])
            e_i = resample(a1_out, layer.target_h, layer.target_w, method="bilinear")
            ad_cache.append((a0_out, a1_in, a1_out))
            e_list.append(e_i)
        c.update(e_list=e_list, ad_cache=ad_cache)

    def _host_forward(self, c: dict, injections: list[np.ndarray] | None) -> None:
        host_in, host_inj, host_pre = [], [], []
        cur = c["rgb"]
        for i, p in enumerate(self.host_stages):
            host_in.append(cur)
            xi = fusion.inject(cur, injections[i]) if injections is not None else cur
            host_inj.append(xi)
            pre = self._conv(c, f"host{i}", xi, p)
            cur = relu(pre)
            host_pre.append(pre)
        feats = cur
        head_small = conv2d(feats, self.head)
        logits = resample(head_small, self.height, self.width, method="bilinear")
        pred = fusion.SegPrediction(logits=logits, probabilities=fusion.sigmoid(logits))
        c.update(
            host_in=host_in, host_inj=host_inj, host_pre=host_pre,
            feats=feats, head_small=head_small, pred=pred,
        )

    # -- backward ----------------------------------------------------------

    def backward(self, sc_backward: bool = True) -> dict[str, np.ndarray]:
        """Gradients of l_total w.r.t. every parameter (zeros for unused ones).

        sc_backward=False drops the structural-consistency term from the
        chain entirely; with the default True it contributes lam * d(l_sc).
        """
        c = self._cache
        if c is None:
            raise ConfigError("backward() called before forward()")
        if "gt" not in c:
            raise ConfigError("backward() requires a forward pass with ground truth")
        grads = {name: np.zeros_like(arr) for name, arr in self.parameters().items()}
        mode = c["mode"]

        # segmentation head
        d_logits = fusion.seg_loss_backward(c["pred"], c["gt"])
        hs = c["head_small"]
        d_head_small = resample_backward(d_logits, hs.shape[1], hs.shape[2], method="bilinear")
        d_feats, gw, gb = conv2d_backward(c["feats"], self.head, d_head_small)
        grads["head.weight"] += gw
        grads["head.bias"] += gb

        # host stages in reverse; collect injection gradients
        d_e = [None] * len(self.host_stages)
        dcur = d_feats
        injected = c["z"] is not None
        for i in reversed(range(len(self.host_stages))):
            d_pre = relu_backward(c["host_pre"][i], dcur)
            d_inj, gw, gb = conv2d_backward(
                c["host_inj"][i], self.host_stages[i], d_pre, col=c["cols"][f"host{i}"]
            )
            grads[f"host.{i}.weight"] += gw
            grads[f"host.{i}.bias"] += gb
            if injected:
                d_e[i] = d_inj
            dcur = d_inj  # flows into host_in[i] (= relu of stage i-1, or rgb)

        d_z = None
        if injected:
            d_embedding = np.zeros_like(c["embedding"])
            for i, layer in enumerate(self.adaptors.layers):
                a0_out, a1_in, a1_out = c["ad_cache"][i]
                d_a1_out = resample_backward(
                    d_e[i], a1_out.shape[1], a1_out.shape[2], method="bilinear"
                )
                d_a1_in, gw, gb = conv2d_backward(
                    a1_in, layer.convs[1], d_a1_out, col=c["cols"][f"ad{i}b"]
                )
                grads[f"adaptor.{i}.1.weight"] += gw
                grads[f"adaptor.{i}.1.bias"] += gb
                d_a0_out = relu_backward(a0_out, d_a1_in)
                d_emb, gw, gb = conv2d_backward(c["embedding"], layer.convs[0], d_a0_out)
                grads[f"adaptor.{i}.0.weight"] += gw
                grads[f"adaptor.{i}.0.bias"] += gb
                d_embedding += d_emb
            d_z = self._jeb_backward(c, d_embedding, grads)

        d_du = None
        if mode == "txd":
            d_du = np.zeros_like(c["d_u"])
            if d_z is not None:
                d_du += self._fuse_backward(c, d_z)
            if sc_backward:
                lam = c["report"].lam
                d_du += lam * sc_loss_backward(c["d_u"], c["rgb"], self.ssim_params)
            self._txd_backward(c, d_du, grads)
        return grads

    def _fuse_backward(self, c: dict, d_z: np.ndarray) -> np.ndarray:
        manner = self.cfg.fusion
        if manner == "add":
            return d_z
        if manner == "hadamard":
            return d_z * c["rgb"]
        return d_z[:3]  # concat order: (d_u, rgb)

    def _jeb_backward(self, c: dict, d_embedding: np.ndarray, grads: dict) -> np.ndarray:
        d_cat, gw, gb = conv2d_backward(
            c["cat"], self.decoder.fusion, d_embedding, col=c["cols"]["fusion"]
        )
        grads["decoder.fusion.weight"] += gw
        grads["decoder.fusion.bias"] += gb
        d_stage_out = [np.zeros_like(o) for o in c["stage_out"]]
        offset = 0
        for i, (u, p) in enumerate(zip(c["ups"], self.decoder.stage_convs)):
            d_branch = d_cat[offset : offset + p.out_ch]
            offset += p.out_ch
            d_up, gw, gb = conv2d_backward(u, p, d_branch)
            grads[f"decoder.stage.{i}.weight"] += gw
            grads[f"decoder.stage.{i}.bias"] += gb
            o = c["stage_out"][i]
            d_stage_out[i] += resample_backward(d_up, o.shape[1], o.shape[2], method="bilinear")
        dcur = np.zeros_like(c["stage_out"][-1])
        for i in reversed(range(len(self.embed_stages))):
            d_total = d_stage_out[i] + dcur
            d_pre = relu_backward(c["stage_pre"][i], d_total)
            d_in, gw, gb = conv2d_backward(
                c["stage_in"][i], self.embed_stages[i], d_pre, col=c["cols"][f"embed{i}"]
            )
            grads[f"embed.{i}.weight"] += gw
            grads[f"embed.{i}.bias"] += gb
            dcur = d_in
        return dcur  # gradient w.r.t. z

    def _txd_backward(self, c: dict, d_du: np.ndarray, grads: dict) -> None:
        txd = self.txd
        po = c["proj_out"]
        d_proj_out = resample_backward(d_du, po.shape[1], po.shape[2], method="bilinear")
        d_lat, gw, gb = conv2d_backward(c["lats"][-1], txd.projector, d_proj_out)
        grads["txd.projector.weight"] += gw
        grads["txd.projector.bias"] += gb

        kernels: KernelField = c["kernels"]
        d_kdata = np.zeros_like(kernels.data)
        for s in reversed(range(len(c["lats"]) - 1)):
            d_lat, d_k = diffusion_step_backward(c["lats"][s], kernels, d_lat)
            d_kdata += d_k

        d_grouped = softmax_axis_backward(kernels.data, d_kdata, axis=1)
        d_logits = d_grouped.reshape(-1, *txd.latent_hw)
        d_pred1_in, gw, gb = conv2d_backward(
            c["pred1_in"], txd.predictor[1], d_logits, col=c["cols"]["pred1"]
        )
        grads["txd.predictor.1.weight"] += gw
        grads["txd.predictor.1.bias"] += gb
        d_pred0_out = relu_backward(c["pred0_out"], d_pred1_in)
        _, gw, gb = conv2d_backward(
            c["texture"], txd.predictor[0], d_pred0_out, col=c["cols"]["pred0"]
        )
        grads["txd.predictor.0.weight"] += gw
        grads["txd.predictor.0.bias"] += gb

        eo = c["enc1_out"]
        d_enc1_out = resample_backward(d_lat, eo.shape[1], eo.shape[2], method="area")
        d_enc1_in, gw, gb = conv2d_backward(
            c["enc1_in"], txd.encoder[1], d_enc1_out, col=c["cols"]["enc1"]
        )
        grads["txd.encoder.1.weight"] += gw
        grads["txd.encoder.1.bias"] += gb
        d_enc0_out = relu_backward(c["enc0_out"], d_enc1_in)
        _, gw, gb = conv2d_backward(
            c["depth"], txd.encoder[0], d_enc0_out, col=c["cols"]["enc0"]
        )
        grads["txd.encoder.0.weight"] += gw
        grads["txd.encoder.0.bias"] += gb


def loss_value(model: TexDiffPipeline, rgb, depth, gt) -> float:
    """Total loss as a plain scalar (used by finite-difference checks)."""
    c = model.forward(rgb, depth, gt)
    return c["report"].l_total
