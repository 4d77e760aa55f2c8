"""Simulated pick, topple, push and correct pipeline for packing cuboids from a pile into a grid."""

__version__ = "0.1.0"
