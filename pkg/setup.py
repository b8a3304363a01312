#!/usr/bin/env python3

from setuptools import setup


exec(open('omp_rag/version.py').read())
# noinspection PyUnresolvedReferences
setup(name='omp_rag',
      version=__version__,
      description='Retrieval-augmented OpenMP parallelization of serial C++',
      author='Tommi Linnakangas',
      author_email='tkl@iki.fi',
      url='https://github.com/tklikifi/omp-rag/',
      install_requires=['beautifulsoup4', 'click', 'Jinja2', 'numpy',
                        'requests', 'urllib3', ],
      extras_require={'test': ['pytest', ], },
      packages=['omp_rag', ],
      package_data={'omp_rag': ['data/*.txt', ], },
      scripts=['scripts/omp-rag', ],
      data_files=[('/etc/omp-rag', ['config/omp-rag.conf', ]),
                  ('share/omp-rag', ['data/reference-runtimes.csv', ])],
      )
