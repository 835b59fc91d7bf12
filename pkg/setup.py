"""Build script.

The compiled kernel is optional: if Cython or a C compiler is unavailable the
package installs pure-Python and `mielab.kernels` falls back to the twin
implementation at import time.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "mielab.kernels._matrix_cy",
                ["src/mielab/kernels/_matrix_cy.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
