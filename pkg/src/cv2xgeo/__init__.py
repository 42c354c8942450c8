"""Geo-based and sensing-based sidelink scheduling for C-V2X mode 4.

Simulator, analytical PDR model and command-line tooling.
"""

__version__ = "0.1.0"
