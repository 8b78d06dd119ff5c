from os import path

from setuptools import find_packages, setup

import vibtcav

this_directory = path.abspath(path.dirname(__file__))
with open(path.join(this_directory, "README.md"), encoding="utf-8") as f:
    long_description = f.read()

setup(
    name="vibtcav",
    version=vibtcav.__version__,
    packages=find_packages(exclude=["tests"]),
    include_package_data=True,
    package_data={"vibtcav": ["vibtcav.json"]},
    description="Test bearing fault classifiers against simulated vibration concepts",
    long_description=long_description,
    long_description_content_type="text/markdown",
    install_requires=[
        "docopt-ng",
        "termcolor",
        "tqdm",
        "pathvalidate",
        "filelock>=3.0.0",
        "numpy>=1.22",
        "scipy>=1.7",
        "scikit-learn>=1.0",
        "typing_extensions; python_version < '3.11'",
    ],
    extras_require={
        "dev": [
            "pytest",
            "pytest-cov",
            "pytest-dotenv",
            "ruff",
            "mypy",
            "types-tqdm",
        ],
    },
    classifiers=[
        "Programming Language :: Python",
        "Development Status :: 3 - Alpha",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    python_requires=">=3.9",
    entry_points={
        "console_scripts": [
            "vibtcav = vibtcav.vibtcav:main",
        ],
    },
)
