import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python fallback is used at import time
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("DNMG_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "dnmg.optcore._kernels",
                ["src/dnmg/optcore/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            ),
            Extension(
                "dnmg._sweep",
                ["src/dnmg/_sweep.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            ),
        ],
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )

setup(ext_modules=ext_modules)
