"""Build the optional compiled CART kernel.

The package works without it: ``fdid._backend`` falls back to the numpy
implementation when the extension is missing. Set ``FDID_NO_EXT=1`` to skip
compilation entirely.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("FDID_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("fdid._cart", ["src/fdid/_cart.pyx"],
                       include_dirs=[numpy.get_include()],
                       extra_compile_args=["-O3"])],
            language_level=3,
        )

setup(ext_modules=ext_modules)
