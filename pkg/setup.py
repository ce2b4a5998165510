from setuptools import setup, find_packages

setup(
    name='uncertainpooling',
    version='1.0.0',
    description='Bayesian uncertain pooling, DPM and reversible-jump meta-analysis of binomial rates.',
    license='BSD3',
    packages=find_packages(exclude=['tests']),
    package_data={'uncertainpooling.studydata': ['datasets.yaml']},
    install_requires=[
        'lxml >= 3.3.5',
        'numpy >= 1.17.0',
        'scipy >= 1.4.0',
        'joblib >= 1.3.0',
        'PyYAML >= 3.11',
        'unicodecsv',
        'tqdm',
        ],
    entry_points={
        'console_scripts': ['uncertainpooling = uncertainpooling.cli:main'],
        },
        zip_safe=False
    )
