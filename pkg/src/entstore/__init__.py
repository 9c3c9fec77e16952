"""Heralded single-photon path entanglement, atomic-memory storage, and the
statistics needed to verify that the entanglement survives."""

__version__ = "0.1.0"
