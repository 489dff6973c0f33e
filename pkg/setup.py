import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # the pure-Python kernel is used instead
    cythonize = None

ext_modules = []
if cythonize is not None and os.getenv("SAFESWARM_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "safeswarm._smoothkern",
                ["src/safeswarm/_smoothkern.pyx"],
                include_dirs=[numpy.get_include()],
                optional=True,
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
