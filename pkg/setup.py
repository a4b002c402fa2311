"""Build hook for the optional compiled kernels.

The package works without a C compiler: if Cython or the build fails the
pure-Python kernels are used at import time.
"""
import os

from setuptools import setup


def _extensions():
    if os.environ.get("FOCKGA_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "fockga._ckernels",
        ["src/fockga/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
