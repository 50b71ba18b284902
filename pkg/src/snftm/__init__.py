"""Structural nested failure time models for time-varying treatments.

Submodules: ``core`` (grids, curves, regimes, cohorts), ``dgp`` (synthetic
worlds with known truth), ``shift`` (the time-scale shift family and blip
transforms), ``gcomp`` (G-computation), ``mle`` (likelihood inference),
``gest`` (G-estimation), ``cfsim`` (counterfactual simulation), ``oracle``
(exact enumeration and theorem checks), ``io`` and ``cli``.
"""

__version__ = "0.1.0"

from . import core  # noqa: F401
