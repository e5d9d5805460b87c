import os

from setuptools import Extension, setup


def extensions():
    # Compiled kernels are optional: the package falls back to pure numpy
    # implementations when the extension is absent (see gdsec.kernels).
    if os.environ.get("GDSEC_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "gdsec._speedups",
        ["src/gdsec/_speedups.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # FMA contraction would round differently from numpy's separate
        # multiply and add; parity with the pure backend requires plain ops.
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
