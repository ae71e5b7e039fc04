import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("PLATOON_VDN_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "platoon_vdn._kernels",
                    ["src/platoon_vdn/_kernels.pyx"],
                    include_dirs=[np.get_include(), "src/platoon_vdn"],
                    depends=["src/platoon_vdn/_gru_ops.h"],
                    libraries=["m"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    # fast-math lets gcc call glibc's vector exp in the gate loops
                    extra_compile_args=["-O3", "-ffast-math"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
