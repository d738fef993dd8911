"""Minimal-time crowd games on constrained domains.

Library layout:

* :mod:`mfg_mintime.geometry` -- domains, targets, signed distances
* :mod:`mfg_mintime.congestion` -- interaction term and speed fields
* :mod:`mfg_mintime.hjb` -- value functions and descent directions
* :mod:`mfg_mintime.trajectories` -- feedback integration and certificates
* :mod:`mfg_mintime.measures` -- particle ensembles, densities, W1
* :mod:`mfg_mintime.equilibrium` -- fixed-point iteration and residuals
* :mod:`mfg_mintime.config` / :mod:`mfg_mintime.cli` -- scenarios and runs
"""

__version__ = "0.1.0"
