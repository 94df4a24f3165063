import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("TBWSIM_NO_EXT", "") in ("", "0"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [Extension("tbwsim.kernels._plant_ext", ["src/tbwsim/kernels/_plant_ext.pyx"],
                       extra_compile_args=["-O2", "-ffp-contract=off"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
