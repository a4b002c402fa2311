"""Heralded quantum-optics circuit simulation in a truncated Fock basis and a
genetic search for states with high phase sensitivity."""

__version__ = "0.1.0"
