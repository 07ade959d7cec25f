"""Build script: compiles the Cython SGD kernels when Cython is available.

The package works without the extension (a pure-Python fallback is selected
at import time), so a missing compiler or Cython only costs speed.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "fedrec._kernels._sgd",
                ["src/fedrec/_kernels/_sgd.pyx"],
                # -ffp-contract=off: forbid FMA contraction so the compiled
                # kernels stay bit-identical to the pure-Python fallback.
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)
