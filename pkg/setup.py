import os

from Cython.Build import cythonize
from setuptools import Extension, setup


def _cpu_has_aesni() -> bool:
    if os.environ.get("IMPIR_DISABLE_AESNI"):
        return False
    try:
        with open("/proc/cpuinfo") as fh:
            return " aes " in fh.read().replace("\t", " ")
    except OSError:
        return False


compile_args = ["-O3"]
if _cpu_has_aesni():
    compile_args += ["-maes", "-msse2"]

setup(
    ext_modules=cythonize(
        [
            Extension(
                "impir._core",
                ["src/impir/_core.pyx", "src/impir/_aes128.c"],
                include_dirs=["src/impir"],
                extra_compile_args=compile_args,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
)
