"""Convex kernels: dense simplex and the trajectory barrier solver."""

from .lp import LinearProgram, LPResult, lp_solve

__all__ = ["LinearProgram", "LPResult", "lp_solve"]
