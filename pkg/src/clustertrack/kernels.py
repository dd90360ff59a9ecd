"""Backend selection for the projection kernel.

The compiled extension is used when importable; setting the environment
variable ``CLUSTERTRACK_PURE_PYTHON=1`` forces the pure-Python fallback.
"""

import os

from . import _dykstra_py

try:
    if os.environ.get("CLUSTERTRACK_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from . import _dykstra as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
dykstra = _compiled.dykstra if _compiled is not None else _dykstra_py.dykstra
dykstra_python = _dykstra_py.dykstra
dykstra_compiled = _compiled.dykstra if _compiled is not None else None
