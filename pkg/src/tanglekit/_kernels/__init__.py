"""Kernel backend selection.

The compiled extension is preferred; set ``TANGLEKIT_PURE=1`` to force the
numpy fallback. ``BACKEND`` names the active implementation.
"""

import os

from . import _pykernels as pure

try:
    from . import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("TANGLEKIT_PURE", "") not in ("1", "true", "yes"):
    active = compiled
    BACKEND = "compiled"
else:
    active = pure
    BACKEND = "pure"

adtw = active.adtw
nms = active.nms
rasterize_coverage = active.rasterize_coverage
worm_shapes = active.worm_shapes

__all__ = ["BACKEND", "adtw", "compiled", "nms", "pure", "rasterize_coverage", "worm_shapes"]
