# This file is part of the bhmmdiar project
# https://github.com/bhmmdiar/bhmmdiar
# (C) 2019 bhmmdiar contributors
#
# SPDX-License-Identifier:    MIT

import os
import setuptools


def path(filename):
    dirpath = os.path.abspath(os.path.dirname(__file__))
    return os.path.join(dirpath, filename)


def read(filename):
    with open(path(filename), mode="rb") as fh:
        return fh.read().decode("utf-8")


packages = setuptools.find_packages(path("src"))
package_dir = {"": path("src")}


setuptools.setup(
    name="bhmmdiar",
    version="0.1.0",
    description="Speaker diarization of x-vector sequences with AHC and Bayesian HMM clustering",
    long_description=read("README.rst"),
    long_description_content_type="text/x-rst",
    author="bhmmdiar contributors",
    packages=packages,
    package_dir=package_dir,
    zip_safe=True,
    url="https://github.com/bhmmdiar/bhmmdiar",
    license="MIT",
    entry_points={
        "console_scripts": [
            "bhmmdiar=bhmmdiar.main:cli"
        ],
    },
    python_requires=">=3.7",
    install_requires=["click", "pathlib2", "numpy", "scipy", "scikit-learn"],
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: Unix",
        "Operating System :: POSIX",
        "Operating System :: MacOS :: MacOS X",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3.7",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: Implementation :: CPython",
        "Topic :: Multimedia :: Sound/Audio :: Speech",
        "Topic :: Scientific/Engineering",
    ],
)
