"""Backend selection for the backward-induction kernels.

The compiled extension is used when it imports; ``QRISK_BACKEND=python``
forces the numpy fallback.
"""

import os

from . import _kernels_py

_requested = os.environ.get("QRISK_BACKEND", "auto").lower()

compiled = None
if _requested != "python":
    try:
        from . import _kernels as compiled  # type: ignore[no-redef]
    except ImportError:
        if _requested == "compiled":
            raise
        compiled = None

BACKENDS = {"python": _kernels_py}
if compiled is not None:
    BACKENDS["compiled"] = compiled

DEFAULT_BACKEND = "compiled" if compiled is not None else "python"


def get(name: str | None = None):
    """Kernel module by name (``"compiled"``, ``"python"`` or ``None`` for default)."""
    if name in (None, "auto"):
        name = DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
