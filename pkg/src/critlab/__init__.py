"""Second moments of critical-point counts of stationary Gaussian fields.

Modules: ``kernel`` (covariance models), ``gauss`` (Gaussian algebra),
``intensity`` (Kac-Rice intensities), ``simulate`` (random-wave fields),
``critpoints`` (detection), ``moments`` (replication studies), ``oned``
(processes on a line) and ``cli``.
"""
from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # pragma: no cover
    __version__ = "0.1.0"
