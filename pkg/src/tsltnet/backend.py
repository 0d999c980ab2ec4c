"""Kernel backend selection.

The compiled extension is preferred when present; the pure-Python fallback
is numerically bit-identical, just slow. Set ``TSLTNET_BACKEND=py`` or
``TSLTNET_BACKEND=c`` to force a choice (forcing ``c`` raises if the
extension was not built).
"""

import os

_forced = os.environ.get("TSLTNET_BACKEND", "").lower()

if _forced == "py":
    from . import _pykernels as kernels
elif _forced == "c":
    from . import _ckernels as kernels  # type: ignore[no-redef]
else:
    try:
        from . import _ckernels as kernels  # type: ignore[no-redef]
    except ImportError:
        from . import _pykernels as kernels

COMPILED: bool = kernels.COMPILED
BACKEND_NAME: str = "compiled" if COMPILED else "pure-python"
