import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # numpy fallback path is used at runtime
    ext_modules = []
else:
    flags = ["-O3", "-ffast-math", "-fopenmp-simd"]
    if os.environ.get("T2TGAN_NATIVE", "1") == "1":
        flags += ["-march=native", "-mprefer-vector-width=512"]
    ext_modules = cythonize(
        [
            Extension(
                "t2tgan._lstm_kernel",
                ["src/t2tgan/_lstm_kernel.pyx"],
                include_dirs=[np.get_include(), "src/t2tgan"],
                extra_compile_args=flags,
                extra_link_args=["-lmvec", "-lm"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
