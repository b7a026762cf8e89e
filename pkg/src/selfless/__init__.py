"""Selfless sequential learning: inhibition regularizers and importance-weighted consolidation."""

__version__ = "0.1.0"
