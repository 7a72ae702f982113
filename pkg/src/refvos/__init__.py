"""Robust referring video object segmentation on synthetic moving-shape videos.

The package generates its own toy dataset (moving colored shapes with
templated referring expressions), trains a query-based segmentation model
that jointly reconstructs the expression embedding from grounded video
features, and discriminates whether a text-video pair actually refers to
an object present in the video.
"""

__version__ = "0.1.0"
