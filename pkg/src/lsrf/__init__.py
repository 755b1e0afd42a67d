"""Nonparametric regression for locally stationary random fields on irregularly spaced sites.

Modules
-------
kernels      compact kernels, boundary-corrected weights, bandwidth rules
levy         Levy-driven moving-average fields on a cell grid
design       random sampling designs and block partitions
estimators   kernel sums, density and Nadaraya-Watson estimators, limit law
backfit      smooth backfitting of additive models
experiments  Monte Carlo studies
cli          command-line driver
"""
__version__ = "0.1.0"
