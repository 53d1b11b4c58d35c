import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # Pure-Python install: the simulator falls back to the numpy loop.
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "mrsafe._fastcore",
                ["src/mrsafe/_fastcore.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
