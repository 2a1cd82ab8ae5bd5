"""Thermal correlators of the 2D massless scalar on the plane and the cylinder,
the covering-map machinery between them, and numerical KMS verification."""

__version__ = "0.1.0"
