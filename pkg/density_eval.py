#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Density Evaluation Module

Normalized 2D density of a trained energy function on a regular grid.

The partition function is estimated either by a Riemann sum over the grid
cell centers (deterministic, default) or by importance sampling with a
kernel density fitted on generator samples as the proposal.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from scipy.ndimage import maximum_filter
from scipy.special import logsumexp
from scipy.stats import gaussian_kde

from errors import ConfigurationError, ScopeError
from figures import plot_density_heatmap
from networks import energy, generate, sample_prior
from random_streams import derive_seed

# Set up logging
logger = logging.getLogger(__name__)

ESTIMATORS = ('riemann', 'importance')
GRID_CSV = 'density_grid.csv'
GRID_JSON = 'density_grid.json'
HEATMAP_PNG = 'density_heatmap.png'


@dataclass
class GridSpec:
    """Rectangle (x_min, x_max, y_min, y_max) split into n_x by n_y cells."""
    bounds: tuple = (-4.0, 4.0, -4.0, 4.0)
    resolution: tuple = (300, 300)

    def __post_init__(self):
        self.bounds = tuple(float(b) for b in self.bounds)
        self.resolution = tuple(int(r) for r in self.resolution)
        x_min, x_max, y_min, y_max = self.bounds
        if not (x_min < x_max and y_min < y_max):
            raise ConfigurationError(f"Grid bounds must satisfy min < max, got {self.bounds}")
        if len(self.resolution) != 2 or min(self.resolution) < 1:
            raise ConfigurationError(f"Grid resolution must be two positive counts, got {self.resolution}")

    @classmethod
    def from_config(cls, density_config):
        return cls(tuple(density_config['bounds']), tuple(density_config['resolution']))

    @property
    def cell_size(self):
        x_min, x_max, y_min, y_max = self.bounds
        n_x, n_y = self.resolution
        return (x_max - x_min) / n_x, (y_max - y_min) / n_y

    @property
    def cell_area(self):
        dx, dy = self.cell_size
        return dx * dy

    def centers(self):
        """Cell-center coordinates along x and along y."""
        x_min, _, y_min, _ = self.bounds
        dx, dy = self.cell_size
        n_x, n_y = self.resolution
        return (x_min + (np.arange(n_x) + 0.5) * dx,
                y_min + (np.arange(n_y) + 0.5) * dy)

    def points(self):
        """(n_x * n_y, 2) cell centers, x-major."""
        xs, ys = self.centers()
        gx, gy = np.meshgrid(xs, ys, indexing='ij')
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass
class DensityGrid:
    """
    Energies and normalized probabilities on a grid.

    `energies` and `probabilities` are n_x by n_y, indexed [i_x, i_y].
    """
    spec: GridSpec
    energies: np.ndarray
    log_partition: float
    probabilities: np.ndarray
    estimator: str = 'riemann'
    log_partition_importance: float = None

    @property
    def bounds(self):
        return self.spec.bounds

    @property
    def resolution(self):
        return self.spec.resolution

    @property
    def mass(self):
        return float(self.probabilities.sum() * self.spec.cell_area)

    def argmax(self):
        """Coordinates of the most probable cell center."""
        i, j = np.unravel_index(np.argmax(self.probabilities), self.probabilities.shape)
        xs, ys = self.spec.centers()
        return float(xs[i]), float(ys[j])


def _require_2d(E):
    if tuple(E.data_shape) != (2,):
        raise ScopeError(f"Density grids are defined for 2D data only, energy has data shape {tuple(E.data_shape)}")


def grid_energies(E, spec, batch_size=16384):
    """
    Evaluate the energy at every cell center.

    Rows are evaluated in independent chunks; the result does not depend on
    `batch_size`.

    Returns:
        np.ndarray: n_x by n_y float64 energies
    """
    _require_2d(E)
    dtype = next(E.parameters(), torch.empty(0, dtype=torch.float64)).dtype
    points = torch.as_tensor(spec.points(), dtype=dtype)
    with torch.no_grad():
        values = torch.cat([energy(E, chunk) for chunk in points.split(batch_size)])
    return values.double().cpu().numpy().reshape(spec.resolution)


def riemann_log_partition(energies, cell_area):
    """log sum_cells exp(-E) * cell_area."""
    return float(logsumexp(-energies) + math.log(cell_area))


def importance_log_partition(E, G, prior, generator, proposal_count=100_000, fit_count=5_000, batch_size=16384):
    """
    Importance-sampling estimate of log Z over the whole plane.

    A Gaussian kernel density fitted on `fit_count` generator samples is the
    proposal q; log Z ~ logsumexp(-E(x_i) - log q(x_i)) - log N.
    """
    _require_2d(E)
    with torch.no_grad():
        fit = generate(G, sample_prior(prior, fit_count, generator)).double().cpu().numpy()
    kde = gaussian_kde(fit.T)
    proposals = kde.resample(int(proposal_count), seed=derive_seed(generator))
    log_q = kde.logpdf(proposals)
    dtype = next(E.parameters(), torch.empty(0, dtype=torch.float64)).dtype
    points = torch.as_tensor(proposals.T, dtype=dtype)
    with torch.no_grad():
        e = torch.cat([energy(E, chunk) for chunk in points.split(batch_size)]).double().cpu().numpy()
    return float(logsumexp(-e - log_q) - math.log(proposal_count))


def estimate_partition(E, spec, estimator='riemann', G=None, prior=None, generator=None, **importance_options):
    """
    Estimate log Z of the density proportional to exp(-E(x)).

    Args:
        E (nn.Module): Energy network over 2D data
        spec (GridSpec): Grid (the Riemann variant integrates over it)
        estimator (str, optional): 'riemann' or 'importance'
        G, prior, generator: Generator, latent prior and random stream for
            the importance variant
        **importance_options: proposal_count, fit_count

    Returns:
        float: log Z

    Raises:
        ScopeError: If the data is not 2D
    """
    if estimator not in ESTIMATORS:
        raise ConfigurationError(f"Unknown partition estimator '{estimator}', expected one of {ESTIMATORS}")
    if estimator == 'riemann':
        return riemann_log_partition(grid_energies(E, spec), spec.cell_area)
    if G is None or prior is None or generator is None:
        raise ConfigurationError("Importance-sampling partition estimate needs a generator, its prior and a random stream")
    return importance_log_partition(E, G, prior, generator, **importance_options)


def density_grid(E, spec, estimator='riemann', **importance_kwargs):
    """
    Normalized density grid.

    Probabilities are exp(-E - log Z) with the Riemann log Z of the same
    grid, so they integrate to 1 over the grid. With estimator='importance'
    the sample-based estimate is carried along in `log_partition_importance`.

    Args:
        E (nn.Module): Energy network over 2D data
        spec (GridSpec): Bounds and resolution

    Returns:
        DensityGrid: The grid
    """
    energies = grid_energies(E, spec)
    log_z = riemann_log_partition(energies, spec.cell_area)
    probabilities = np.exp(-energies - log_z)
    grid = DensityGrid(spec=spec, energies=energies, log_partition=log_z,
                       probabilities=probabilities, estimator=estimator)
    if estimator == 'importance':
        grid.log_partition_importance = estimate_partition(E, spec, 'importance', **importance_kwargs)
    logger.info(f"Density grid {spec.resolution[0]}x{spec.resolution[1]} over {spec.bounds}: "
                f"log Z = {log_z:.6f}, mass = {grid.mass:.8f}")
    return grid


def grid_local_maxima(grid, count=None, window=5):
    """
    Local maxima of the probability grid, most probable first.

    Args:
        grid (DensityGrid): Evaluated grid
        count (int, optional): Keep at most this many
        window (int, optional): Side of the neighborhood a maximum dominates

    Returns:
        np.ndarray: (n, 2) coordinates of the maxima
    """
    p = grid.probabilities
    peaks = (p == maximum_filter(p, size=window, mode='constant', cval=-np.inf)) & (p > 0)
    ix, iy = np.nonzero(peaks)
    order = np.argsort(-p[ix, iy], kind='stable')
    if count is not None:
        order = order[:count]
    xs, ys = grid.spec.centers()
    return np.stack([xs[ix[order]], ys[iy[order]]], axis=1)


def export_density(grid, output_dir, title=None, centers=None):
    """
    Write the grid as CSV, its metadata sidecar as JSON and a heatmap PNG.

    Returns:
        dict: Paths of the written files
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    xs, ys = grid.spec.centers()
    gx, gy = np.meshgrid(xs, ys, indexing='ij')
    frame = pd.DataFrame({
        'x': gx.ravel(), 'y': gy.ravel(),
        'energy': grid.energies.ravel(), 'probability': grid.probabilities.ravel(),
    })
    csv_path = output_dir / GRID_CSV
    frame.to_csv(csv_path, index=False, float_format='%.10g')

    metadata = {
        'bounds': list(grid.bounds),
        'resolution': list(grid.resolution),
        'cell_area': grid.spec.cell_area,
        'log_partition': grid.log_partition,
        'estimator': grid.estimator,
        'log_partition_importance': grid.log_partition_importance,
        'mass': grid.mass,
    }
    json_path = output_dir / GRID_JSON
    json_path.write_text(json.dumps(metadata, indent=2))

    png_path = plot_density_heatmap(grid, output_dir / HEATMAP_PNG, title=title, centers=centers)
    logger.info(f"Density grid written to {csv_path}")
    return {'csv': csv_path, 'json': json_path, 'png': png_path}


def read_density(output_dir):
    """Reload an exported grid (energies and probabilities from the CSV)."""
    output_dir = Path(output_dir)
    metadata = json.loads((output_dir / GRID_JSON).read_text())
    spec = GridSpec(tuple(metadata['bounds']), tuple(metadata['resolution']))
    frame = pd.read_csv(output_dir / GRID_CSV)
    return DensityGrid(
        spec=spec,
        energies=frame['energy'].to_numpy().reshape(spec.resolution),
        log_partition=metadata['log_partition'],
        probabilities=frame['probability'].to_numpy().reshape(spec.resolution),
        estimator=metadata['estimator'],
        log_partition_importance=metadata.get('log_partition_importance'),
    )
