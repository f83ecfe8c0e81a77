"""
Setup script for PowerCoreFW package.
"""
from powercorefw import (
    __name__,
    __version__,
    __author__,
    __email__
)

from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name=__name__.lower(),
    version=__version__,
    author=__author__,
    author_email=__email__,
    description="PowerCoreFW builds power consumption models (MLR, regression tree, MLP) from operating-system resource counters",
    long_description=long_description,
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "License :: OSI Approved :: BSD License",
        "Operating System :: POSIX :: Linux",
        "Intended Audience :: Science/Research",
        "Topic :: System :: Monitoring",
    ],
    package_dir={"": "."},
    exclude=["examples", "tests", "docs", "dist"],
    packages=find_packages(exclude=["tests", "examples", "examples.*"]),
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.20",
        "scipy>=1.8",
    ],
    extras_require={
        "workload": ["psutil>=5.8"],
        "test": ["pytest>=7.0"],
        "mic-reference": ["minepy>=1.2"],
    },
    entry_points={
        "console_scripts": [
            "powercorefw=powercorefw.cli:main",
        ],
    },
)
