"""Build the optional compiled kernels; fall back to pure Python if they fail."""
import sys

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "rdpredict._kernels_c",
                ["src/rdpredict/_kernels_c.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"warning: compiled kernels disabled ({exc}); using pure-Python backend",
          file=sys.stderr)
    extensions = []

setup(ext_modules=extensions)
