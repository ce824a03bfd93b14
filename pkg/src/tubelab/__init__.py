"""Tube volumes, concentration loci and metric-measure distances."""

__version__ = "0.1.0"
