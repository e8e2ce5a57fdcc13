from setuptools import setup, find_packages

setup(
    name="sstep-krylov",
    version="0.1.0",
    description="s-step Orthomin, GCR and GMRES solvers for nonsymmetric sparse systems",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy>=1.21.0",
        "scipy>=1.8.0",
        "click>=8.0.0",
        "pydantic>=2.0.0",
        "tqdm>=4.60.0",
    ],
    extras_require={
        "test": ["pytest>=7.0.0"],
    },
    entry_points={
        "console_scripts": [
            "sstep-krylov=sstep_krylov.cli:cli",
        ],
    },
    python_requires=">=3.9",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)
