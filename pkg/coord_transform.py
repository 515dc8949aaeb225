#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Coordinate Transformation Module

This module maps 2D sample coordinates onto an SVG canvas.
"""

import logging

import numpy as np

# Set up logging
logger = logging.getLogger(__name__)


def data_to_canvas(x, y, bounds, svg_width, svg_height, padding=0.05):
    """
    Convert data-space coordinates to SVG coordinates with aspect ratio handling.

    Args:
        x (float): Horizontal data coordinate
        y (float): Vertical data coordinate
        bounds (tuple): (x_min, x_max, y_min, y_max) of the visible region
        svg_width (int): Width of SVG canvas
        svg_height (int): Height of SVG canvas
        padding (float, optional): Padding percentage for the SVG canvas. Defaults to 0.05 (5%).

    Returns:
        tuple: (x, y) SVG coordinates

    Raises:
        ValueError: If the bounds have zero or negative extent
    """
    x_min, x_max, y_min, y_max = bounds
    x_range = x_max - x_min
    y_range = y_max - y_min
    if x_range <= 0 or y_range <= 0:
        raise ValueError("Invalid bounds: zero or negative range")

    # Samples outside the region are pinned to its border
    x = max(x_min, min(x, x_max))
    y = max(y_min, min(y, y_max))

    effective_width = svg_width * (1 - 2 * padding)
    effective_height = svg_height * (1 - 2 * padding)

    # Use the smaller scale so the region fits in both dimensions
    scale = min(effective_width / x_range, effective_height / y_range)

    x_offset = (svg_width - (x_range * scale)) / 2
    y_offset = (svg_height - (y_range * scale)) / 2

    cx = x_offset + (x - x_min) * scale
    cy = y_offset + (y_max - y) * scale  # Invert Y axis
    return cx, cy


def transform_points(points, bounds, svg_width, svg_height, padding=0.05):
    """
    Transform an (n, 2) array of data coordinates to SVG coordinates.

    Non-finite points are dropped.

    Returns:
        list: List of (x, y) SVG coordinates
    """
    points = np.asarray(points, dtype=np.float64)
    finite = np.isfinite(points).all(axis=1)
    if not finite.all():
        logger.warning(f"Dropping {int((~finite).sum())} non-finite points from the drawing")
    return [data_to_canvas(px, py, bounds, svg_width, svg_height, padding) for px, py in points[finite]]


def points_bounds(points, margin=0.1):
    """
    Bounds (x_min, x_max, y_min, y_max) enclosing the points plus a relative margin.
    """
    points = np.asarray(points, dtype=np.float64)
    points = points[np.isfinite(points).all(axis=1)]
    if points.shape[0] == 0:
        return (-1.0, 1.0, -1.0, 1.0)
    lo, hi = points.min(axis=0), points.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    lo, hi = lo - margin * span, hi + margin * span
    return (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))
