#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Figures Module

Raster figures: density heatmaps and image sample grids.
"""

import logging
from pathlib import Path

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

# Set up logging
logger = logging.getLogger(__name__)


def plot_density_heatmap(grid, path, title=None, centers=None, cmap='viridis'):
    """
    Render a DensityGrid as a heatmap.

    Args:
        grid (DensityGrid): Evaluated grid
        path (str or Path): Output PNG
        title (str, optional): Figure title
        centers (array-like, optional): True mode centers to overlay

    Returns:
        Path: The written file
    """
    path = Path(path)
    x_min, x_max, y_min, y_max = grid.bounds
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(grid.probabilities.T, origin='lower', extent=(x_min, x_max, y_min, y_max),
              cmap=cmap, interpolation='nearest', aspect='equal')
    if centers is not None:
        centers = np.asarray(centers)
        ax.scatter(centers[:, 0], centers[:, 1], s=12, c='white', marker='x', linewidths=0.8)
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    plt.tight_layout()
    plt.savefig(path, dpi=150)
    plt.close(fig)
    logger.info(f"Heatmap saved to: {path}")
    return path


def plot_image_grid(images, path, ncols=10, title=None):
    """
    Tile image samples (n, c, h, w) with values in [0, 1].

    One- and three-channel images are shown directly; other channel counts
    are tiled channel by channel along the width.
    """
    path = Path(path)
    images = np.clip(np.asarray(images, dtype=np.float64), 0.0, 1.0)
    n, c, h, w = images.shape
    if c == 3:
        tiles = images.transpose(0, 2, 3, 1)
    else:
        tiles = images.transpose(0, 2, 1, 3).reshape(n, h, c * w)
    ncols = max(1, min(ncols, n))
    nrows = int(np.ceil(n / ncols))
    fig, axes = plt.subplots(nrows, ncols, figsize=(ncols * tiles.shape[2] / 28, nrows * h / 28), squeeze=False)
    for k, ax in enumerate(axes.ravel()):
        ax.axis('off')
        if k < n:
            ax.imshow(tiles[k], cmap='gray' if c != 3 else None, vmin=0.0, vmax=1.0)
    if title:
        fig.suptitle(title)
    plt.tight_layout()
    plt.savefig(path, dpi=100)
    plt.close(fig)
    logger.info(f"Image grid saved to: {path}")
    return path
