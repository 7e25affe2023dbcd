"""Promptable point-cloud segmentation at desk scale."""

from .geometry import PointCloud, PatchSet, NormalizationTransform

__all__ = ["PointCloud", "PatchSet", "NormalizationTransform"]
