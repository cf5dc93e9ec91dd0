"""Unsupervised volumetric segmentation with a 3D attention W-Net."""
__version__ = "0.1.0"
