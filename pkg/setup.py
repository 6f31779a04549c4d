import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# no -ffast-math: the compiled and pure-Python kernels must agree bit for bit
# up to libm, and the parity tests rely on it
ext = Extension(
    "regdyn._kernels",
    ["src/regdyn/_kernels.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    extra_compile_args=["-O2"],
)

setup(ext_modules=cythonize([ext], language_level=3))
