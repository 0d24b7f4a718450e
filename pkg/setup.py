"""Build script for the optional compiled kernel.

The package works without the extension (a NumPy fallback is selected at
import time); the extension is only a faster lane for the hot particle loops.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "fvqsd._kernels_c",
                ["src/fvqsd/_kernels_c.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
