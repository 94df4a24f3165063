"""Hot-loop kernels.

The compiled extension is used when it was built; otherwise (or when
``TBWSIM_PURE_PYTHON=1`` is set) the pure-Python implementation is selected.
"""

import os

from . import _plant_py

if os.environ.get("TBWSIM_PURE_PYTHON", "") not in ("", "0"):
    _ext = None
else:
    try:
        from . import _plant_ext as _ext
    except ImportError:  # extension not built
        _ext = None

if _ext is not None:
    advance_plant = _ext.advance_plant
    BACKEND = "cython"
else:
    advance_plant = _plant_py.advance_plant
    BACKEND = "python"

advance_plant_py = _plant_py.advance_plant
advance_plant_ext = _ext.advance_plant if _ext is not None else None

__all__ = ["advance_plant", "advance_plant_py", "advance_plant_ext", "BACKEND"]
