from setuptools import setup

setup(
    install_requires=[
        "numpy>=1.21.1",
        "matplotlib>=3.5.2",
        "pandas>=1.3.1",
        "h5py>=3.7.0",
        "PyYAML>=5.4.1",
        "scipy>=1.7.0"
    ],
    entry_points={
        "console_scripts": [
            "segpoint=segpoint.cli:main",
        ],
    },
)
