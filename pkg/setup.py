"""Build script.

The compiled stepper kernel is optional: if Cython or a C toolchain is
unavailable the package installs anyway and falls back to the numpy
implementation at import time (see mgtlab._backend).
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "mgtlab._stepper",
                ["src/mgtlab/_stepper.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - toolchain-dependent
    sys.stderr.write(f"warning: building without compiled stepper ({exc})\n")

setup(ext_modules=ext_modules)
