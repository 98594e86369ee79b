import os
import sys

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:  # no Cython: the package runs on its numpy fallback
    cythonize = None


class OptionalBuildExt(build_ext):
    """Keep installing when no compiler is available; the fallback takes over."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using pure Python", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc})", file=sys.stderr)


ext_modules = []
if cythonize is not None and not os.environ.get("ROOMAUTH_NO_EXTENSION"):
    ext_modules = cythonize(
        [
            Extension(
                "roomauth._core",
                ["src/roomauth/_core.pyx"],
                include_dirs=[np.get_include()],
                language="c++",
                # no FMA contraction: distances must round like the numpy fallback
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
