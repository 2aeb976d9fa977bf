"""Spin squeezing in the diluted 2D dipolar XXZ model: critical-temperature
estimates, cluster truncated-Wigner quench dynamics, statistics and an
exact-diagonalization oracle."""

__version__ = "0.1.0"
