from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="oobsim",
    version="0.1.0",
    author="oobsim developers",
    description="Simulator for secure initialization of sensor node batches over an LED-to-camera channel",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests*"]),
    package_data={
        "oobsim": ["py.typed"],  # Include type information
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Security :: Cryptography",
        "Topic :: System :: Networking",
        "Typing :: Typed",
    ],
    python_requires=">=3.9",
    install_requires=[
        "click>=8.0.0",
        "pydantic>=2.0.0",
        "rich>=10.0.0",
        "python-dotenv>=0.19.0",
        "numpy>=1.22.0",
        "scipy>=1.9.0",
        "cryptography>=40.0.0",
        "pillow>=9.1.0",
        "simpy>=4.0.0",
    ],
    entry_points={
        "console_scripts": [
            "oobsim=oobsim.cli.main:cli",
        ],
    },
)
