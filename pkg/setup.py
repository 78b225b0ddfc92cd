import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("COLLMON_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("collmon._jumpkernel", ["src/collmon/_jumpkernel.pyx"],
                       include_dirs=[np.get_include()])],
            compiler_directives={"language_level": 3},
        )

setup(ext_modules=ext_modules)
