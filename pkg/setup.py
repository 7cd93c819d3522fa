"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so the extension is marked optional and any build
failure downgrades to a warning.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "lnln.diffcore.kernels._ckernels",
        sources=["src/lnln/diffcore/kernels/_ckernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})
    for e in ext_modules:
        e.optional = True
except ImportError:
    # No Cython at build time: ship pure Python.
    pass

setup(ext_modules=ext_modules)
