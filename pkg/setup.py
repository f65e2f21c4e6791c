"""Build the optional compiled kernels; the package falls back to numpy without them."""
import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("AVATARSPLAT_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "avatarsplat.renderer._kernels",
                ["src/avatarsplat/renderer/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-fopenmp"],
                extra_link_args=["-fopenmp"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
