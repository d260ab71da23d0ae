"""Builds the optional compiled kernels (_speedups).

The package works without the extension: crossview_eval.kernels falls back
to the pure-numpy implementations when the import fails or when
CROSSVIEW_EVAL_PURE=1 is set.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "crossview_eval._speedups",
        sources=["src/crossview_eval/_speedups.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
