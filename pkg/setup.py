import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off keeps the compiled kernels bit-compatible with the
# numpy fallback (no FMA contraction of a*b+c).
ext = Extension(
    "pirhc.engine._kernels",
    ["src/pirhc/engine/_kernels.pyx"],
    include_dirs=[numpy.get_include()],
    extra_compile_args=["-O3", "-ffp-contract=off"],
)

setup(ext_modules=cythonize([ext], language_level="3"))
