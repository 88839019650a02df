"""Ablation sweep driver: one pipeline run per parameter value on a shared
synthetic scene batch, reporting losses and metrics per row.

The components axis stacks the architecture variants cumulatively
(baseline, +EB, +JEB, +TXD, +SC); the other axes vary one knob of the
default configuration. Rows that fail are marked and the sweep continues.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .grad import synth_scenes
from .metrics import f_measure_max, mae
from .numeric import ConfigError
from .pipeline import PipelineConfig, TexDiffPipeline

DEFAULT_GRIDS = {
    "kernel": [3, 5, 7, 9, 11],
    "steps": [1, 2, 3, 4, 5, 6],
    "alpha": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
    "lambda": [0.0, 0.01, 0.02, 0.03, 0.04],
    "fusion": ["concat", "hadamard", "add"],
    "components": ["baseline", "EB", "JEB", "TXD", "SC"],
}

_COMPONENT_MODES = {
    "baseline": ("off", 0.0),
    "EB": ("none", 0.0),
    "JEB": ("raw", 0.0),
    "TXD": ("txd", 0.0),
    "SC": ("txd", None),  # None -> keep the base lambda
}


@dataclass
class SweepSpec:
    parameter: str
    values: list | None
    base: RunConfig

    def __post_init__(self):
        if self.parameter not in DEFAULT_GRIDS:
            raise ConfigError(
                f"unknown sweep parameter {self.parameter!r}; known: {sorted(DEFAULT_GRIDS)}"
            )
        if self.values is None:
            self.values = list(DEFAULT_GRIDS[self.parameter])
        if not self.values:
            raise ConfigError("sweep values must be non-empty")
        self.values = [self._coerce(v) for v in self.values]

    def _coerce(self, v):
        if self.parameter in ("kernel", "steps"):
            return int(v)
        if self.parameter in ("alpha", "lambda"):
            return float(v)
        v = str(v)
        if self.parameter == "components" and v not in _COMPONENT_MODES:
            raise ConfigError(f"unknown component stage {v!r}")
        if self.parameter == "fusion" and v not in ("add", "hadamard", "concat"):
            raise ConfigError(f"unknown fusion manner {v!r}")
        return v


def _pipeline_config(spec: SweepSpec, value) -> PipelineConfig:
    base = spec.base
    kw = dict(
        alpha=base.alpha, texture_size=base.texture_size, latent_dim=base.latent_dim,
        kernel=base.kernel, steps=base.steps, lam=base.lam, fusion=base.fusion,
        seed=base.seed, depth_mode="txd",
    )
    if spec.parameter == "kernel":
        kw["kernel"] = value
    elif spec.parameter == "steps":
        kw["steps"] = value
    elif spec.parameter == "alpha":
        kw["alpha"] = value
    elif spec.parameter == "lambda":
        kw["lam"] = value
    elif spec.parameter == "fusion":
        kw["fusion"] = value
    else:
        mode, lam = _COMPONENT_MODES[value]
        kw["depth_mode"] = mode
        if lam is not None:
            kw["lam"] = lam
    return PipelineConfig(**kw)


def _run_row(args) -> dict:
    spec, value, n_scenes, size, train_steps = args
    row = {"parameter": spec.parameter, "value": value, "seed": spec.base.seed}
    try:
        pcfg = _pipeline_config(spec, value)
        scenes = synth_scenes(spec.base.seed, n_scenes, size)
        dtype = np.float64 if train_steps else np.float32
        model = TexDiffPipeline(pcfg, size, size, dtype=dtype)
        if train_steps:
            from .grad import AdamW, cosine_lr

            params = model.parameters()
            opt = AdamW(params)
            for step in range(train_steps):
                total = {k: np.zeros_like(v) for k, v in params.items()}
                for scene in scenes:
                    depth = scene.depth.data if pcfg.depth_mode in ("txd", "raw") else None
                    model.forward(scene.rgb, depth, scene.mask)
                    g = model.backward()
                    for k in total:
                        total[k] += g[k] / len(scenes)
                opt.step(total, lr=cosine_lr(opt.lr, step, train_steps))
        maes, fbs, l_sc, l_seg, l_tot = [], [], [], [], []
        for scene in scenes:
            depth = scene.depth.data if pcfg.depth_mode in ("txd", "raw") else None
            out = model.forward(scene.rgb, depth, scene.mask)
            pred = np.clip(out["pred"].probabilities.astype(np.float64), 0.0, 1.0)
            maes.append(mae(pred, scene.mask))
            fbs.append(f_measure_max(pred, scene.mask))
            l_sc.append(out["report"].l_sc)
            l_seg.append(out["report"].l_seg)
            l_tot.append(out["report"].l_total)
        row.update(
            status="ok",
            metrics={"mae": float(np.mean(maes)), "f_beta_max": float(np.mean(fbs))},
            losses={
                "l_sc": float(np.mean(l_sc)),
                "l_seg": float(np.mean(l_seg)),
                "lambda": pcfg.lam,
                "l_total": float(np.mean(l_tot)),
            },
            config={"depth_mode": pcfg.depth_mode, "fusion": pcfg.fusion,
                    "kernel": pcfg.kernel, "steps": pcfg.steps, "alpha": pcfg.alpha},
        )
    except Exception as exc:
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def run_sweep(
    spec: SweepSpec,
    n_scenes: int = 4,
    size: int = 32,
    parallel: int = 1,
    train_steps: int = 0,
) -> list[dict]:
    """One row per value; all rows share the base seed and scene batch.

    train_steps > 0 optimizes each row's model briefly before evaluation
    (rows stay independent and share the seed).
    """
    jobs = [(spec, v, n_scenes, size, train_steps) for v in spec.values]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_run_row, jobs))
    return [_run_row(j) for j in jobs]
