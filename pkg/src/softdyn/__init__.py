"""Parametric skinned body model with learned per-vertex soft-tissue dynamics."""

__version__ = "0.1.0"
