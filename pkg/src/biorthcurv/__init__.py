"""Curvature engines, Grassmannian minimisers and certificates for S2xS3 and SU(3)/SO(3)."""

__version__ = "0.1.0"
