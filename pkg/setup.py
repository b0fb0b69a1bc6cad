import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "scarseg.kernels._fast",
        ["src/scarseg/kernels/_fast.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-march=native"],
    )
]

# The compiled kernels are an optional speedup; the package falls back to the
# numpy reference backend when the extension is absent.
ext_modules = cythonize(extensions, language_level=3) if cythonize else []

setup(ext_modules=ext_modules)
