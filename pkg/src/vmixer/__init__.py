"""Hybrid local-attention / global-mixer network for volumetric segmentation."""

__version__ = "0.1.0"
