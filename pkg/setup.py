import os

from setuptools import setup

ext_modules = []
if os.environ.get("DPCDR_NO_EXT", "") in ("", "0"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "dpcdr._kernels",
                    ["src/dpcdr/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no fast-math / FMA contraction: results must be IEEE-reproducible
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
