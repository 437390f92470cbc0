# Builds the compiled scan kernels. The package works without them: if the
# extension is missing at import time, casvsr.scan falls back to the pure
# numpy kernels. -ffp-contract=off keeps the C mul/add rounding identical to
# numpy's so both backends produce the same bits.
from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "casvsr._scan_ext",
                sources=["src/casvsr/_scan_ext.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
