"""Simulated NLoS localization with a hybrid-coded backscatter tag and an FMCW radar."""

__version__ = "0.1.0"
