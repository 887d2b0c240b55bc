"""Build the optional Cython kernels; the package imports fine without them."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("PSAM_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "psam.imager._kernels",
                    ["src/psam/imager/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no contraction into FMA: results must match the numpy path bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
