"""Mesh-attached Gaussian head avatars with a learned identity prior."""

__version__ = "0.1.0"
