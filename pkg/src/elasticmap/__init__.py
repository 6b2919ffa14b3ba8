"""Elastic multi-resolution LiDAR mapping with octree submaps."""

__version__ = "0.1.0"
