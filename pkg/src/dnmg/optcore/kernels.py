"""Simplex kernel selection: compiled extension when built, NumPy otherwise.

Set ``DNMG_PURE_PYTHON=1`` to force the fallback.
"""

import os

from ._kernels_py import AT_LOWER, AT_UPPER, BASIC, FIXED, FREE  # noqa: F401

if os.environ.get("DNMG_PURE_PYTHON"):
    from ._kernels_py import dual_ratio_test, ratio_test, select_entering

    COMPILED = False
else:
    try:
        from ._kernels import dual_ratio_test, ratio_test, select_entering
        COMPILED = True
    except ImportError:
        from ._kernels_py import dual_ratio_test, ratio_test, select_entering

        COMPILED = False
