"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (pure NumPy fallback in
qnpd.kernels); a failed compile therefore only disables the fast path.
"""

import numpy
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "qnpd.kernels._cyops",
                ["src/qnpd/kernels/_cyops.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
