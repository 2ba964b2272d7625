import os

from setuptools import setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
    import numpy  # noqa: F401
except ImportError:
    cythonize = None


class optional_build_ext(build_ext):
    """Fall back to the pure-Python kernels if the compiler is unavailable."""

    def run(self):
        try:
            super().run()
        except Exception as exc:
            print(f"warning: compiled kernels not built ({exc}); using pure Python")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not build {ext.name} ({exc}); using pure Python")


ext_modules = []
if cythonize is not None and not os.environ.get("RESBP_NO_EXT"):
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "resbp._kernels",
                ["src/resbp/_kernels.pyx"],
                # identical rounding to the pure-Python path requires no FMA contraction
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
