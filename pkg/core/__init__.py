"""Stealthbench core library"""

__version__ = "1.0.0"
