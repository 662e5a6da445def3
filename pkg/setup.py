"""Build script: compiles the optional Newton-Raphson extension kernel.

The package works without the extension (a numpy fallback is selected at
import time); set GRIDPLAN_PURE=1 to skip the compile step entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("GRIDPLAN_PURE"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "gridplan._nr_cy",
                    ["src/gridplan/_nr_cy.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
