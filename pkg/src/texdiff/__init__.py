"""texdiff: depth-guided texture diffusion kernels with verifiable numerics.

Submodules are imported lazily so the CLI can configure thread-count
environment variables before numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "numeric",
    "rtfio",
    "texture",
    "diffusion",
    "consistency",
    "fusion",
    "metrics",
    "pipeline",
    "grad",
    "sweep",
    "imgio",
    "config",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
