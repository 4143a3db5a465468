"""Build script for the compiled kernel extension.

The package works without the extension (a pure-Python implementation of the
same kernels is selected at import time), so a failed build is not fatal for
development installs -- but the compiled core is what ships.
"""

from setuptools import Extension, setup

import numpy
from Cython.Build import cythonize

extensions = [
    Extension(
        "cocolq._kernels",
        ["src/cocolq/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
