#!/usr/bin/env python

from setuptools import setup

setup(
    name='privaudit',
    include_package_data=True,
    packages=['privaudit', 'privaudit.experiments', 'privaudit.scripts'],
    package_data={'privaudit': ['extra-data/*.yml']},
    python_requires='>=3.10',
    entry_points={
        'console_scripts': ['privaudit=privaudit.scripts.run_experiment:main'],
    },
)
