"""Build script for the optional compiled kernel extension.

The package is pure Python plus one Cython extension, voicekit.kernels._native,
holding the DSP inner loops. The extension is a performance add-on only: if the
build fails (no compiler, no Cython), installation proceeds and the package
falls back to the numpy kernel implementations at import time.
"""

import logging

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

log = logging.getLogger("voicekit.setup")


class optional_build_ext(build_ext):
    """build_ext that degrades to a pure-Python install on any failure."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, cythonize failure, ...
            log.warning("native kernel build skipped: %s", exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            log.warning("building %s failed (%s); using numpy fallback kernels", ext.name, exc)


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        log.warning("Cython not available; using numpy fallback kernels")
        return []
    ext = Extension(
        "voicekit.kernels._native",
        sources=["src/voicekit/kernels/_native.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level="3")


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
