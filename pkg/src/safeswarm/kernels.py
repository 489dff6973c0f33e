"""Backend selection for the smoothed-barrier evaluator.

The compiled extension ``safeswarm._smoothkern`` is used when importable;
otherwise, or when ``SAFESWARM_PURE_PYTHON=1`` is set, the numpy
implementation in ``safeswarm._smoothkern_py`` is used. Both expose
``eval_batch`` and ``transition`` with identical semantics.
"""

import os

from . import _smoothkern_py as pure
from ._smoothkern_py import (  # noqa: F401
    LEAF_CUSTOM, LEAF_OBSTACLE, LEAF_PAIR, OP_MIN2, OP_MINLSE, OP_NEG, OP_PUSH)

compiled = None
if os.environ.get("SAFESWARM_PURE_PYTHON") != "1":
    try:
        from . import _smoothkern as compiled
    except ImportError:
        compiled = None

BACKEND = "compiled" if compiled is not None else "python"
_impl = compiled if compiled is not None else pure

eval_batch = _impl.eval_batch
transition = _impl.transition


def get_backend(name: str | None = None):
    """Return the kernel module named ``"compiled"`` or ``"python"`` (default: active)."""
    if name is None:
        return _impl
    if name == "python":
        return pure
    if name == "compiled":
        if compiled is None:
            raise ImportError("compiled kernel extension is not built")
        return compiled
    raise ValueError(f"unknown backend {name!r}")
