import setuptools

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

__version__ = "0.1.0"

setuptools.setup(
    name="trajmbm",
    version=__version__,
    license="MIT",
    description="PMBM trajectory filter with N-scan pruning and dual decomposition data association",
    long_description=long_description,
    long_description_content_type="text/markdown",
    project_urls={},
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    packages=setuptools.find_packages(
        exclude=["*.tests", "*.tests.*", "tests.*", "tests"]
    ),
    python_requires=">=3.8",
    install_requires=[
        "django>=3.2",
        "numpy>=1.20",
        "scipy>=1.6",
    ],
    extras_require={
        'test': []
    },
    entry_points={
        "console_scripts": ["trajmbm=trajmbm.cli:main"],
    },
)
