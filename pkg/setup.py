"""Build script: compiles the optional C kernel extension.

Set STYLEINV_PURE=1 to skip the extension entirely; the package then runs
on the pure-numpy backend.  A failed compile is not fatal either way.
"""

import os

from setuptools import Extension, setup


def extensions():
    if os.environ.get("STYLEINV_PURE") == "1":
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "styleinv._ckernels",
        ["src/styleinv/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
