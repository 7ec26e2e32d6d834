import numpy as np
from setuptools import Extension, setup

# The compiled convolution core is optional: if Cython or a C compiler is
# unavailable the package installs pure-Python and fkprior._kernels falls
# back to the numpy implementation at import time.
try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "fkprior._kernels._convext",
                ["src/fkprior/_kernels/_convext.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
