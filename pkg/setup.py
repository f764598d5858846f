"""Build script: compiles the optional fast kernels.

The package is fully functional without the extension; a pure-Python
implementation of the same kernels is selected at import time when the
compiled module is missing (see crane_sim._kernels).
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, fall back to pure Python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or Cython missing
            warnings.warn(f"fast kernels not built ({exc}); using pure-Python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"fast kernels not built ({exc}); using pure-Python fallback")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    # Results must match the pure-Python fallback bit for bit: no fast-math,
    # no FMA contraction, and no sincos fusion (glibc sincos differs from
    # separate sin/cos by 1 ulp for some inputs).
    ext = Extension(
        "crane_sim._kernels._ckernels",
        ["src/crane_sim/_kernels/_ckernels.pyx"],
        extra_compile_args=["-ffp-contract=off", "-fno-builtin-sin", "-fno-builtin-cos", "-fno-builtin-sincos"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
