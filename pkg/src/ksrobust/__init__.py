"""Kuramoto-Sivashinsky FEM solver with robust and Stackelberg control loops."""

__version__ = "0.1.0"
