"""Pick the compiled kernels when importable, else the numpy fallback.

``AVATARSPLAT_BACKEND=python`` forces the fallback.
"""
import os

try:
    from . import _kernels as native
except ImportError:  # extension not built
    native = None

from . import _fallback as python

DEFAULT = "native" if native is not None and os.environ.get("AVATARSPLAT_BACKEND", "") != "python" else "python"


def get(name=None):
    name = name or DEFAULT
    if name == "native":
        if native is None:
            raise RuntimeError("compiled kernels are not available; rebuild with `pip install -e .`")
        return native
    if name == "python":
        return python
    raise ValueError(f"unknown backend {name!r}")


def available():
    return ["native", "python"] if native is not None else ["python"]
