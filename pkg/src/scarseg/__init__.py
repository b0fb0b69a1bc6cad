"""Curriculum-staged scar segmentation on synthetic cardiac LGE phantoms."""

__version__ = "0.1.0"
