import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python fallback is used at runtime
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("QRISK_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "qrisk.dynprog._kernels",
                ["src/qrisk/dynprog/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
        compiler_directives={"boundscheck": False, "wraparound": False, "cdivision": True},
    )

setup(ext_modules=ext_modules)
