import json
import setuptools
from os import environ


with open("README.md", "r") as fh:
    long_description = fh.read()

with open("VERSION", "r") as fh:
    version_info = json.load(fh)

version_major = '0' if not version_info.get('VERSION_MAJOR') else version_info['VERSION_MAJOR']
version_minor = '0' if not version_info.get('VERSION_MINOR') else version_info['VERSION_MINOR']
pipeline_number = '0' if not environ.get('GITHUB_RUN_NUMBER') else environ['GITHUB_RUN_NUMBER']

setuptools.setup(
    name="mmrisk",
    version=f"{version_major}.{version_minor}.{pipeline_number}",
    license="MIT",
    description="Multimodal BiLSTM cardiovascular risk prediction from radiology reports and clinical predictors",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=["mmrisk", "mmrisk.test", "mmrisk.examples"],
    python_requires=">=3.8",
    install_requires=["numpy>=1.20", "scipy>=1.6", "pandas>=1.2", "scikit-learn>=0.24", "nltk>=3.6", "jinja2"],
    extras_require={"test": ["pytest"]},
    package_dir={'mmrisk': 'mmrisk'},
    package_data={"mmrisk": ['resources/*.txt',
                             'templates/*.jinja2',
                             'examples/*.py']},
    entry_points={"console_scripts": ["mmrisk=mmrisk.mm_cli:main"]},
    classifiers=[
        "Programming Language :: Python :: 3.8",
        "License :: OSI Approved :: MIT License",
        "Operating System :: POSIX",
    ],
)
