import glob

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

# the CLI entry point stays out of the extension
sources = sorted(s for s in glob.glob("src/*.cpp") if not s.endswith("main.cpp"))
sources.append("bindings/pymodule.cpp")

ext = Pybind11Extension(
    "factharness._core",
    sources,
    include_dirs=["include", "vendor"],
    cxx_std=20,
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
