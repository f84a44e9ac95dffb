"""Build script for the optional compiled kernel extension.

Set FSNIDS_SKIP_EXT=1 to install without the extension; the package then
falls back to the pure-numpy kernel lane at import time.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("FSNIDS_SKIP_EXT"):
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "fsnids.kernels._core",
                ["src/fsnids/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
