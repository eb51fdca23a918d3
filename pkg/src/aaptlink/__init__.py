"""Simulation and estimation of a polarization-drifting fiber link: classical
polarimetric tracking versus Bayesian ancilla-assisted process tomography."""

__version__ = "0.1.0"
