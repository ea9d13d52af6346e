"""Pseudo-spectral compressible flow with potential temperature and a Littlewood-Paley energy ledger."""

__version__ = "0.1.0"
