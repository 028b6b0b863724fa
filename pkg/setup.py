import os
import runpy
from setuptools import setup, find_packages

# Get version
cwd = os.path.abspath(os.path.dirname(__file__))
versionpath = os.path.join(cwd, 'nestmatch', 'version.py')
version = runpy.run_path(versionpath)['__version__']

# Get the documentation
with open(os.path.join(cwd, 'README.rst'), "r") as f:
    long_description = f.read()

CLASSIFIERS = [
    "Environment :: Console",
    "Intended Audience :: Science/Research",
    "License :: OSI Approved :: MIT License",
    "Operating System :: OS Independent",
    "Programming Language :: Python",
    "Topic :: Scientific/Engineering :: Physics",
    "Development Status :: 3 - Alpha",
    "Programming Language :: Python :: 3.9",
]

setup(
    name="nestmatch",
    version=version,
    author="nestmatch developers",
    description="nestmatch: minimum-weight perfect matching decoder for nest-structured surface-code syndromes",
    long_description=long_description,
    long_description_content_type="text/x-rst",
    keywords=["surface code", "decoding", "perfect matching", "blossom", "simulation"],
    platforms=["OS Independent"],
    classifiers=CLASSIFIERS,
    packages=find_packages(exclude=['tests']),
    include_package_data=True,
    install_requires=[
        'numpy',
        'numba',
        'scipy',
        'pandas>=1.3',
        'sciris>=2.0.3',
        'pyyaml',
        'networkx',
    ],
    entry_points={
        'console_scripts': ['nestmatch=nestmatch.cli:main'],
    },
)
