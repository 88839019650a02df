"""Run configuration: TOML parsing, validation, and canonical serialization.

Unknown keys are hard errors so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .numeric import ConfigError

_PATH_KEYS = ("rgb", "depth", "gt", "out_dir")


@dataclass
class RunConfig:
    alpha: float = 0.3
    texture_size: tuple[int, int] = (12, 12)
    latent_dim: int = 24
    kernel: int = 7
    steps: int | str = "auto"
    lam: float = 0.02
    fusion: str = "add"
    seed: int = 0
    paths: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        th, tw = self.texture_size
        if th < 2 or tw < 2:
            raise ConfigError("texture_size entries must be >= 2")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.kernel % 2 == 0 or self.kernel < 3:
            raise ConfigError(f"kernel must be odd and >= 3, got {self.kernel}")
        if isinstance(self.steps, str):
            if self.steps != "auto":
                raise ConfigError(f"steps must be 'auto' or an integer, got {self.steps!r}")
        elif self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.fusion not in ("add", "hadamard", "concat"):
            raise ConfigError(f"fusion must be add|hadamard|concat, got {self.fusion!r}")
        for key in self.paths:
            if key not in _PATH_KEYS:
                raise ConfigError(f"unknown path key {key!r}; known: {_PATH_KEYS}")

    def to_dict(self) -> dict:
        d = {
            "alpha": self.alpha,
            "texture_size": list(self.texture_size),
            "latent_dim": self.latent_dim,
            "kernel": self.kernel,
            "steps": self.steps,
            "lambda": self.lam,
            "fusion": self.fusion,
            "seed": self.seed,
        }
        d.update(self.paths)
        return d


_KNOWN_KEYS = {
    "alpha", "texture_size", "latent_dim", "kernel", "steps", "lambda",
    "fusion", "seed", *_PATH_KEYS,
}


def parse_config(text: str) -> RunConfig:
    """Parse TOML text into a RunConfig; unknown keys are rejected."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict = {}
    if "alpha" in raw:
        kwargs["alpha"] = float(raw["alpha"])
    if "texture_size" in raw:
        ts = raw["texture_size"]
        if isinstance(ts, int):
            ts = [ts, ts]
        if not (isinstance(ts, list) and len(ts) == 2):
            raise ConfigError("texture_size must be an int or a 2-element list")
        kwargs["texture_size"] = (int(ts[0]), int(ts[1]))
    for key, attr in (("latent_dim", "latent_dim"), ("kernel", "kernel"), ("seed", "seed")):
        if key in raw:
            kwargs[attr] = int(raw[key])
    if "steps" in raw:
        kwargs["steps"] = raw["steps"] if isinstance(raw["steps"], str) else int(raw["steps"])
    if "lambda" in raw:
        kwargs["lam"] = float(raw["lambda"])
    if "fusion" in raw:
        kwargs["fusion"] = str(raw["fusion"])
    paths = {k: str(raw[k]) for k in _PATH_KEYS if k in raw}
    if paths:
        kwargs["paths"] = paths
    return RunConfig(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {type(v).__name__} to TOML")


def serialize_config(cfg: RunConfig) -> str:
    """Canonical TOML form: fixed key order, one key per line."""
    lines = []
    d = cfg.to_dict()
    order = ["alpha", "texture_size", "latent_dim", "kernel", "steps", "lambda",
             "fusion", "seed", *_PATH_KEYS]
    for key in order:
        if key in d:
            lines.append(f"{key} = {_toml_value(d[key])}")
    return "\n".join(lines) + "\n"
