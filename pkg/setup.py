"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so any build failure here downgrades to a warning
instead of aborting the install.
"""

import warnings

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    # lazcodec.py is plain Python that also compiles cleanly; building it
    # speeds up LAZ decode severalfold without a second implementation
    ext_modules = cythonize(
        ["src/canopy_forge/_kernels.pyx", "src/canopy_forge/lazcodec.py"],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    warnings.warn(f"Cython kernels not built, using numpy fallback: {exc}")

setup(ext_modules=ext_modules)
