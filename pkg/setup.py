"""Build script: compiles the optional Cython trajectory kernel.

The package is fully functional without the extension (a pure-numpy
backend is selected at import time), so a failed compile only costs
speed, never correctness.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "keldren._twobody_c",
                ["src/keldren/_twobody_c.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(f"keldren: skipping Cython extension build ({exc})\n")

setup(ext_modules=ext_modules)
