"""Prescribed Gauss-Kronecker curvature for graphs over S^m x S^n in S^{m+n+1}."""

__version__ = "0.1.0"
