"""texdiff command-line application.

Subcommands: extract, diffuse, ssim, pipeline, eval, gradcheck, train-toy,
synth, sweep. Heavy imports happen inside the handlers so that --threads /
TEXDIFF_THREADS can pin BLAS thread counts before numpy loads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path


def _set_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get("TEXDIFF_THREADS")
        if env is None:
            return
        n = int(env)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _resolved_config(args) -> "RunConfig":  # noqa: F821
    from .config import RunConfig, load_config

    config_path = getattr(args, "config", None) or args.global_config
    cfg = load_config(config_path) if config_path else RunConfig()
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = args.global_seed
    if seed is not None:
        cfg = RunConfig(**{**_cfg_kwargs(cfg), "seed": seed})
    return cfg


def _cfg_kwargs(cfg) -> dict:
    return {
        "alpha": cfg.alpha, "texture_size": cfg.texture_size,
        "latent_dim": cfg.latent_dim, "kernel": cfg.kernel, "steps": cfg.steps,
        "lam": cfg.lam, "fusion": cfg.fusion, "seed": cfg.seed, "paths": cfg.paths,
    }


def _resolve_seed(args, default: int = 0) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if args.global_seed is not None:
        return args.global_seed
    return default


def _parse_size(text: str) -> tuple[int, int]:
    h, _, w = text.partition("x")
    return int(h), int(w)


# -- subcommand handlers -----------------------------------------------------

def cmd_extract(args) -> int:
    import numpy as np  # noqa: F401
    from .imgio import load_image, save_preview
    from .rtfio import write_rtf
    from .texture import TexConfig, extract_texture

    x = load_image(args.infile, kind="rgb8")
    h, w = _parse_size(args.size)
    out = extract_texture(x, TexConfig(alpha=args.alpha, target_h=h, target_w=w))
    write_rtf(args.out, out.astype("f4"))
    if args.preview:
        save_preview(args.preview, out)
    print(f"texture shape={out.shape} alpha={args.alpha} -> {args.out}")
    return 0


def cmd_diffuse(args) -> int:
    import numpy as np
    from .diffusion import DepthMap, default_txd_params, diffuse, project_and_upscale
    from .imgio import load_image, save_preview
    from .rtfio import load_bundle, read_rtf, write_rtf

    depth = DepthMap(data=load_image(args.depth, kind="depth8"))
    xh = read_rtf(args.texture).astype(np.float64)
    rng = np.random.default_rng(_resolve_seed(args))
    params = default_txd_params(
        rng,
        latent_dim=args.latent,
        window=args.kernel,
        steps="auto" if args.steps == "auto" else int(args.steps),
        latent_hw=(xh.shape[1], xh.shape[2]),
    )
    if args.params:
        bundle = load_bundle(args.params)
        convs = params.encoder + params.predictor + [params.projector]
        names = (
            [f"txd.encoder.{i}" for i in range(len(params.encoder))]
            + [f"txd.predictor.{i}" for i in range(len(params.predictor))]
            + ["txd.projector"]
        )
        for name, conv in zip(names, convs):
            conv.weight[...] = bundle[f"{name}.weight"]
            conv.bias[...] = bundle[f"{name}.bias"]
    enhanced = diffuse(depth, xh, params, record_trace=args.trace is not None)
    h, w = depth.data.shape[1], depth.data.shape[2]
    project_and_upscale(enhanced, h, w, params)
    write_rtf(args.out, enhanced.latent.astype("f4"))
    if args.preview:
        save_preview(args.preview, enhanced.projected)
    if args.trace:
        trace_dir = Path(args.trace)
        trace_dir.mkdir(parents=True, exist_ok=True)
        for i, lat in enumerate(enhanced.trace):
            write_rtf(trace_dir / f"step_{i:03d}.rtf", lat.astype("f4"))
    print(f"diffused steps={enhanced.steps_run} latent={enhanced.latent.shape} -> {args.out}")
    return 0


def cmd_ssim(args) -> int:
    import numpy as np
    from .consistency import SSIMParams, sc_loss, ssim
    from .rtfio import read_rtf

    a = read_rtf(args.a).astype(np.float64)
    b = read_rtf(args.b).astype(np.float64)
    p = SSIMParams(window=args.window, sigma=args.sigma)
    value = ssim(a, b, p)
    print(f"ssim={value:.12f}")
    print(f"sc_loss={sc_loss(a, b, p):.12f}")
    print(f"window={args.window}")
    print(f"sigma={args.sigma}")
    return 0


def run_pipeline(cfg, rgb_path, depth_path, out_path, report_path, gt_path=None, out_dir=None):
    """Run the full pipeline on one image pair; writes artifacts and a report."""
    import numpy as np
    from .config import serialize_config
    from .imgio import load_image, save_image
    from .pipeline import PipelineConfig, TexDiffPipeline
    from .rtfio import save_bundle, write_rtf

    t_start = time.perf_counter()
    rgb = load_image(rgb_path, kind="rgb8")
    depth = load_image(depth_path, kind="depth8")
    gt = None
    if gt_path:
        gt = (load_image(gt_path, kind="depth8") > 0.5).astype(np.float64)
    h, w = rgb.shape[1], rgb.shape[2]
    pcfg = PipelineConfig(
        alpha=cfg.alpha, texture_size=cfg.texture_size, latent_dim=cfg.latent_dim,
        kernel=cfg.kernel, steps=cfg.steps, lam=cfg.lam, fusion=cfg.fusion,
        seed=cfg.seed,
    )
    model = TexDiffPipeline(pcfg, h, w, dtype=np.float32)
    cache = model.forward(rgb, depth, gt)

    out_dir = Path(out_dir) if out_dir else Path(out_path).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    write_rtf(out_dir / "texture.rtf", cache["texture"].astype("f4"))
    write_rtf(out_dir / "enhanced.rtf", cache["enhanced"].latent.astype("f4"))
    save_image(out_path, cache["pred"].probabilities)
    bundle_path = out_dir / "params.rtfz"
    save_bundle(bundle_path, model.parameters())
    params_hash = hashlib.sha256(bundle_path.read_bytes()).hexdigest()

    report = {
        "schema": 1,
        "config": json.loads(json.dumps(cfg.to_dict())),
        "config_toml": serialize_config(cfg),
        "losses": cache["report"].to_dict() if "report" in cache else {"l_sc": cache["l_sc"]},
        "steps_run": cache["enhanced"].steps_run,
        "params_sha256": params_hash,
        "timing_s": round(time.perf_counter() - t_start, 4),
    }
    if report_path:
        Path(report_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def cmd_pipeline(args) -> int:
    cfg = _resolved_config(args)
    rgb = args.rgb or cfg.paths.get("rgb")
    depth = args.depth or cfg.paths.get("depth")
    gt = args.gt or cfg.paths.get("gt")
    if not rgb or not depth:
        return _fail("pipeline: --rgb and --depth (or config paths) are required")
    report = run_pipeline(cfg, rgb, depth, args.out, args.report, gt_path=gt)
    print(f"pipeline ok steps={report['steps_run']} t={report['timing_s']}s -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    import numpy as np
    from .imgio import load_image
    from .metrics import f_measure_max, mae, miou

    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    names = sorted(p.name for p in pred_dir.iterdir() if p.suffix.lower() == ".png")
    if not names:
        return _fail(f"eval: no PNG files in {pred_dir}")
    wanted = args.metrics.split(",")
    rows = []
    for name in names:
        gt_path = gt_dir / name
        if not gt_path.exists():
            return _fail(f"eval: missing ground truth {gt_path}")
        row: dict = {"image": name}
        if "miou" in wanted:
            pred_labels = (load_image(pred_dir / name, kind="depth8")[0] * 255).astype(int)
            gt_labels = (load_image(gt_path, kind="depth8")[0] * 255).astype(int)
            row["miou"] = miou(pred_labels, gt_labels, args.classes)
        if "mae" in wanted or "fbeta" in wanted:
            pred = load_image(pred_dir / name, kind="depth8")
            gt = (load_image(gt_path, kind="depth8") > 0.5).astype(np.float64)
            if "mae" in wanted:
                row["mae"] = mae(pred, gt)
            if "fbeta" in wanted:
                row["fbeta"] = f_measure_max(pred, gt)
        rows.append(row)
        print(json.dumps(row, sort_keys=True))
    agg = {"images": len(rows)}
    for key in ("mae", "fbeta", "miou"):
        vals = [r[key] for r in rows if key in r]
        if vals:
            agg[key] = float(np.mean(vals))
    print(json.dumps({"aggregate": agg}, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    from .grad import run_gradchecks

    reports = run_gradchecks(args.op, seed=_resolve_seed(args))
    failed = 0
    for r in reports:
        print(r.row())
        failed += 0 if r.passed else 1
    if failed:
        return _fail(f"{failed} gradient check(s) failed")
    print(f"all {len(reports)} gradient checks passed")
    return 0


def cmd_train_toy(args) -> int:
    from .grad import ToyTrainConfig, train_toy
    from .rtfio import save_bundle

    cfg = _resolved_config(args)
    tcfg = ToyTrainConfig(
        n_scenes=args.n_scenes, size=args.size, steps=args.steps,
        lam=cfg.lam, seed=cfg.seed, fusion=cfg.fusion,
    )
    result = train_toy(tcfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["step,l_sc,l_seg,l_total"]
    for i, r in enumerate(result.losses):
        lines.append(f"{i},{r.l_sc:.10f},{r.l_seg:.10f},{r.l_total:.10f}")
    (out_dir / "losses.csv").write_text("\n".join(lines) + "\n")
    save_bundle(out_dir / "params.rtfz", result.model.parameters())
    first, last = result.losses[0], result.losses[-1]
    print(
        f"trained {len(result.losses)} steps: l_sc {first.l_sc:.4f} -> {last.l_sc:.4f}, "
        f"l_seg {first.l_seg:.4f} -> {last.l_seg:.4f} -> {out_dir}"
    )
    return 0


def cmd_synth(args) -> int:
    from .grad import synth_scenes
    from .imgio import save_image

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenes = synth_scenes(_resolve_seed(args), args.n, args.size)
    for i, s in enumerate(scenes):
        save_image(out_dir / f"scene_{i:03d}_rgb.png", s.rgb)
        save_image(out_dir / f"scene_{i:03d}_depth.png", s.depth.data)
        save_image(out_dir / f"scene_{i:03d}_mask.png", s.mask)
    print(f"wrote {len(scenes)} scenes to {out_dir}")
    return 0


def cmd_sweep(args) -> int:
    from .sweep import SweepSpec, run_sweep

    cfg = _resolved_config(args)
    values = args.values.split(",") if args.values else None
    spec = SweepSpec(parameter=args.parameter, values=values, base=cfg)
    rows = run_sweep(spec, n_scenes=args.n_scenes, size=args.size,
                     parallel=args.parallel, train_steps=args.train_steps)
    out_path = Path(args.out) if args.out else None
    payload = json.dumps(rows, indent=2, sort_keys=True)
    if out_path:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(payload + "\n")
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    return 0 if all(r.get("status") == "ok" for r in rows) else 1


# -- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="texdiff", description=__doc__)
    ap.add_argument("--threads", type=int, default=None, help="BLAS thread count")
    ap.add_argument("--config", dest="global_config", default=None,
                    help="run configuration (TOML); subcommand --config wins")
    ap.add_argument("--seed", dest="global_seed", type=int, default=None,
                    help="seed fallback for subcommands that take one")
    ap.add_argument("--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract a high-frequency texture map")
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--size", default="12x12", help="working size HxW")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preview", default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("diffuse", help="diffuse texture through a depth map")
    p.add_argument("--depth", required=True)
    p.add_argument("--texture", required=True)
    p.add_argument("--kernel", type=int, default=7)
    p.add_argument("--latent", type=int, default=24)
    p.add_argument("--steps", default="auto")
    p.add_argument("--params", default=None, help="parameter bundle (.rtfz)")
    p.add_argument("--out", required=True)
    p.add_argument("--preview", default=None)
    p.add_argument("--trace", default=None, help="directory for per-step latents")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("ssim", help="SSIM and SC loss between two tensors")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--window", type=int, default=11)
    p.add_argument("--sigma", type=float, default=1.5)
    p.set_defaults(func=cmd_ssim)

    p = sub.add_parser("pipeline", help="full pipeline on one RGB/depth pair")
    p.add_argument("--rgb", default=None)
    p.add_argument("--depth", default=None)
    p.add_argument("--gt", default=None, help="optional binary mask for loss reporting")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--metrics", default="mae,fbeta")
    p.add_argument("--classes", type=int, default=2)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--op", default="all")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-toy", help="toy training on synthetic scenes")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-scenes", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("synth", help="generate synthetic RGB/depth/mask scenes")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="ablation sweep over one parameter")
    p.add_argument("--parameter", required=True,
                   choices=["kernel", "steps", "alpha", "lambda", "fusion", "components"])
    p.add_argument("--values", default=None, help="comma-separated values")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-scenes", type=int, default=4)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--train-steps", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    if args.verbose:
        shown = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
        print(f"texdiff {args.command}: {shown}", file=sys.stderr)
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parsable failure
        return _fail(f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
