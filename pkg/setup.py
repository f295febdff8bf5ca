from setuptools import setup

setup(
    name="isac_detect",
    version="0.1.0",
    description="delay-Doppler path detection and estimation on OFDM channel estimates",
    long_description="",
    license="MIT license",
    packages=["isac_detect", "isac_detect.models", "isac_detect.data"],
    install_requires=[
        "torch>=1.5.0",
        "h5py>=2.10",
        "sacred>=0.8,<0.9",
        "numpy>=1.18",

        # Coarse dependencies
        "scipy>=1.5.2",
        "pandas>=1.0",
        "tqdm>=4.0,<5.0",
        "matplotlib>=3.0,<4.0",
        # PGM map export, also a matplotlib dependency
        "Pillow>=6.0",
    ],
    entry_points={
        "console_scripts": ["isac-detect=isac_detect.cli:main"],
    },
    test_suite="testing",
)
