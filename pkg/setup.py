"""Build script for the compiled message-passing core.

The extension is optional: if it fails to build, ``fullflow.kernels`` falls
back to the numpy implementation at import time.
"""
import os
import sys

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

openmp = [] if sys.platform == "darwin" else ["-fopenmp"]

ext_modules = []
if cythonize is not None and not os.environ.get("FULLFLOW_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "fullflow.kernels._core",
                ["src/fullflow/kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"] + openmp,
                extra_link_args=openmp,
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
        quiet=True,
    )

setup(ext_modules=ext_modules)
