"""Algebraic renormalisation toolkit for a singular stochastic PDE with derivative noise."""
from __future__ import annotations

__version__ = "0.1.0"
