"""Quanta model of neural scaling: theory, sparse-parity sweeps and gradient clustering."""

__version__ = "0.1.0"
