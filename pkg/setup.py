from setuptools import setup, find_packages

setup(
    name='copula-compound-regression',
    version='1.0.0',
    description='Copula-linked frequency-severity regression for insurance claims',
    packages=find_packages(exclude=('examples', 'examples.*')),
    python_requires='>=3.10',
    install_requires=[
        'numpy>=1.26.0',
        'pandas>=2.0.0',
        'scipy>=1.11.0',
        'openpyxl>=3.1.1',
        'chardet>=5.2.0',
        'python-dotenv>=1.0.1',
        'tomli>=2.0.1; python_version<"3.11"',
    ],
    extras_require={
        'plots': ['plotly>=5.22.0'],
        'test': ['pytest>=7.4'],
    },
    entry_points={
        'console_scripts': ['ccr=ccr.cli:main'],
    },
)
