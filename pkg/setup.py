from setuptools import setup, find_packages
from codecs import open
from os import path

with open('requirements_common.txt') as f:
    requirements = [line for line in f.readlines() if line.strip() and not line.startswith('#')]

# Get README
this_directory = path.abspath(path.dirname(__file__))
with open(path.join(this_directory, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

# Get Release version
path_version = path.join(this_directory, 'spectraseg', 'version.txt')
with open(path_version) as f:
    version = f.read().strip()


setup(
    name='spectraseg',
    version=version,
    description='Benchmark of organ segmentation networks on hyperspectral, RGB and tissue-parameter images.',
    long_description=long_description,
    long_description_content_type='text/markdown',
    author='spectraseg developers',
    author_email='none@none.com',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Programming Language :: Python :: 3',
    ],
    python_requires='>=3.8',
    packages=find_packages(exclude=['docs', 'testing', 'testing.*']),
    include_package_data=True,
    package_data={'spectraseg': ['version.txt', 'config/*.json']},
    install_requires=requirements,
    extras_require={
        'dev': ["pre-commit>=2.10.0", "pytest~=6.2", "pytest-cov"],
        'oracle': ["torch>=1.8.0"],
    },
    entry_points={
        'console_scripts': [
            'spectraseg=spectraseg.main:run_main',
        ],
    },
)
