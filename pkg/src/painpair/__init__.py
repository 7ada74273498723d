"""Pairwise pain-intensity (PSPI) regression from reference/target face frames."""

__version__ = "0.1.0"
