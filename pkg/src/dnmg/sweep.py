"""Selects the compiled sweep kernels when available."""

import os

from ._sweep_py import DELTA_FWD, DELTA_REV, LINE, SWITCH, WYE_FWD, WYE_REV

COMPILED = False
if not os.environ.get("DNMG_PURE_PYTHON"):
    try:
        from ._sweep import ac_sweep, linear_sweep

        COMPILED = True
    except ImportError:
        pass
if not COMPILED:
    from ._sweep_py import ac_sweep, linear_sweep

__all__ = ["COMPILED", "linear_sweep", "ac_sweep",
           "LINE", "SWITCH", "WYE_FWD", "WYE_REV", "DELTA_FWD", "DELTA_REV"]
