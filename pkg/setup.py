"""Build script: compiles the optional subset-cover extension when possible.

The package is pure Python; the extension only accelerates the exhaustive
deception-parameter search. Set DEFSIM_PURE=1 to skip compilation entirely.
A failed compile degrades to the pure-Python fallback instead of aborting.
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing on minimal hosts
            print(f"warning: extension build skipped ({exc}); using pure-Python kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: {ext.name} build failed ({exc}); using pure-Python kernels")


ext_modules = []
if os.environ.get("DEFSIM_PURE") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            ["src/defsim/_subsetcover.pyx"],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        print("warning: Cython not available; using pure-Python kernels")

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
