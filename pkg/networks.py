#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Networks Module

This module defines the three parametric networks of the model (energy
function, generator, statistics network), the latent prior, and the
gradient accessors every other module builds on:

- energy(E, x)          one unbounded scalar energy per sample row
- generate(G, z)        deterministic map from latent rows to samples
- statistic(T, x, z)    one scalar per (sample, latent) row pair
- grad_energy_x / grad_energy_z   input gradients of E and of E o G

Architectures are declared in the run configuration (see config_parser);
MLPs are used for 2D and tabular data, a small convolutional stack for images.
"""

import hashlib
import logging
import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from errors import ConfigurationError, NumericFault

# Set up logging
logger = logging.getLogger(__name__)

ACTIVATIONS = {
    'relu': nn.ReLU,
    'leaky_relu': lambda: nn.LeakyReLU(0.2),
    'elu': nn.ELU,
    'softplus': nn.Softplus,
    'tanh': nn.Tanh,
    'swish': nn.SiLU,
}

OUTPUT_ACTIVATIONS = {
    'none': nn.Identity,
    'tanh': nn.Tanh,
    'sigmoid': nn.Sigmoid,
}


def _activation(name):
    try:
        return ACTIVATIONS[name]()
    except KeyError:
        raise ConfigurationError(f"Unknown activation '{name}', expected one of {sorted(ACTIVATIONS)}")


def _output_activation(name):
    try:
        return OUTPUT_ACTIVATIONS[name or 'none']()
    except KeyError:
        raise ConfigurationError(f"Unknown output activation '{name}', expected one of {sorted(OUTPUT_ACTIVATIONS)}")


def mlp(in_dim, hidden, out_dim, activation):
    """
    Build a fully connected stack with no final nonlinearity.

    Args:
        in_dim (int): Input width
        hidden (list): Hidden layer widths
        out_dim (int): Output width
        activation (str): Activation name from ACTIVATIONS

    Returns:
        nn.Sequential: The stack
    """
    layers = []
    width = in_dim
    for h in hidden:
        layers.append(nn.Linear(width, h))
        layers.append(_activation(activation))
        width = h
    layers.append(nn.Linear(width, out_dim))
    return nn.Sequential(*layers)


def conv_features(in_channels, channels, activation):
    """Stride-2 3x3 convolutions, one per entry of `channels`."""
    layers = []
    width = in_channels
    for c in channels:
        layers.append(nn.Conv2d(width, c, kernel_size=3, stride=2, padding=1))
        layers.append(_activation(activation))
        width = c
    layers.append(nn.Flatten())
    return nn.Sequential(*layers)


def _flat_size(module, data_shape):
    with torch.no_grad():
        return module(torch.zeros(1, *data_shape)).shape[1]


# ---------------------------------------------------------------------------
# Energy functions
# ---------------------------------------------------------------------------

class MLPEnergy(nn.Module):
    """Energy E_theta: flattened sample -> unbounded scalar."""

    def __init__(self, data_shape, hidden=(512, 512, 512), activation='swish'):
        super().__init__()
        self.data_shape = tuple(data_shape)
        self.net = mlp(math.prod(self.data_shape), list(hidden), 1, activation)

    def forward(self, x):
        return self.net(x.flatten(1)).squeeze(-1)


class ConvEnergy(nn.Module):
    """Energy E_theta for image data: conv stack followed by a linear head."""

    def __init__(self, data_shape, channels=(64, 128, 256), hidden=(), activation='leaky_relu'):
        super().__init__()
        self.data_shape = tuple(data_shape)
        self.features = conv_features(self.data_shape[0], list(channels), activation)
        self.head = mlp(_flat_size(self.features, self.data_shape), list(hidden), 1, activation)

    def forward(self, x):
        return self.head(self.features(x)).squeeze(-1)


class ConstantEnergy(nn.Module):
    """Test head: E(x) = value everywhere (critical everywhere)."""

    def __init__(self, data_shape, value=0.0):
        super().__init__()
        self.data_shape = tuple(data_shape)
        self.value = float(value)

    def forward(self, x):
        # keep x in the graph so input gradients are defined (and zero)
        return x.flatten(1).sum(1) * 0.0 + self.value


class QuadraticEnergy(nn.Module):
    """Test head: E(x) = 1/2 ||x - center||^2, optionally scaled."""

    def __init__(self, dim, center=None, scale=1.0):
        super().__init__()
        self.data_shape = (dim,)
        center = torch.zeros(dim) if center is None else torch.as_tensor(center, dtype=torch.get_default_dtype())
        self.register_buffer('center', center)
        self.scale = float(scale)

    def forward(self, x):
        diff = x - self.center.to(x.dtype)
        return 0.5 * self.scale * (diff * diff).sum(1)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

class MLPGenerator(nn.Module):
    """Generator G_omega: R^k -> data space."""

    def __init__(self, latent_dim, data_shape, hidden=(512, 512, 512), activation='relu',
                 output_activation='none'):
        super().__init__()
        self.latent_dim = int(latent_dim)
        self.data_shape = tuple(data_shape)
        self.net = nn.Sequential(
            mlp(self.latent_dim, list(hidden), math.prod(self.data_shape), activation),
            _output_activation(output_activation),
        )

    def forward(self, z):
        return self.net(z).view(z.shape[0], *self.data_shape)


class ConvGenerator(nn.Module):
    """Generator for 28x28 images: linear projection then two upsampling stages."""

    def __init__(self, latent_dim, data_shape, channels=(256, 128, 64), activation='relu',
                 output_activation='sigmoid'):
        super().__init__()
        self.latent_dim = int(latent_dim)
        self.data_shape = tuple(data_shape)
        c0, c1, c2 = channels
        side = self.data_shape[-1] // 4
        if side * 4 != self.data_shape[-1] or self.data_shape[-1] != self.data_shape[-2]:
            raise ConfigurationError(f"Conv generator needs square images with side divisible by 4, got {self.data_shape}")
        self.c0, self.side = c0, side
        self.project = nn.Sequential(nn.Linear(self.latent_dim, c0 * side * side), _activation(activation))
        self.body = nn.Sequential(
            nn.ConvTranspose2d(c0, c1, kernel_size=4, stride=2, padding=1),
            _activation(activation),
            nn.ConvTranspose2d(c1, c2, kernel_size=4, stride=2, padding=1),
            _activation(activation),
            nn.Conv2d(c2, self.data_shape[0], kernel_size=3, padding=1),
            _output_activation(output_activation),
        )

    def forward(self, z):
        h = self.project(z).view(z.shape[0], self.c0, self.side, self.side)
        return self.body(h)


class IdentityGenerator(nn.Module):
    """Test head: G(z) = z (k = d)."""

    def __init__(self, dim):
        super().__init__()
        self.latent_dim = dim
        self.data_shape = (dim,)

    def forward(self, z):
        return z


# ---------------------------------------------------------------------------
# Statistics networks
# ---------------------------------------------------------------------------

class MLPStatistics(nn.Module):
    """Statistics network T_phi(x, z) on the concatenated pair."""

    def __init__(self, data_shape, latent_dim, hidden=(512, 512), activation='leaky_relu'):
        super().__init__()
        self.data_shape = tuple(data_shape)
        self.latent_dim = int(latent_dim)
        self.net = mlp(math.prod(self.data_shape) + self.latent_dim, list(hidden), 1, activation)

    def forward(self, x, z):
        return self.net(torch.cat([x.flatten(1), z], dim=1)).squeeze(-1)


class ConvStatistics(nn.Module):
    """Statistics network for images: conv features of x joined with z."""

    def __init__(self, data_shape, latent_dim, channels=(64, 128), hidden=(512,), activation='leaky_relu'):
        super().__init__()
        self.data_shape = tuple(data_shape)
        self.latent_dim = int(latent_dim)
        self.features = conv_features(self.data_shape[0], list(channels), activation)
        width = _flat_size(self.features, self.data_shape)
        self.head = mlp(width + self.latent_dim, list(hidden), 1, activation)

    def forward(self, x, z):
        return self.head(torch.cat([self.features(x), z], dim=1)).squeeze(-1)


class ConstantStatistics(nn.Module):
    """Test head: T(x, z) = value."""

    def __init__(self, data_shape, latent_dim, value=0.0):
        super().__init__()
        self.data_shape = tuple(data_shape)
        self.latent_dim = latent_dim
        self.value = float(value)

    def forward(self, x, z):
        return x.flatten(1).sum(1) * 0.0 + z.sum(1) * 0.0 + self.value


class BilinearStatistics(nn.Module):
    """Test head: T(x, z) = <x, z> (k = d)."""

    def __init__(self, dim):
        super().__init__()
        self.data_shape = (dim,)
        self.latent_dim = dim

    def forward(self, x, z):
        return (x.flatten(1) * z).sum(1)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def initialize_parameters(module, generator):
    """
    Fan-in scaled uniform initialization driven by an explicit generator.

    Every weight and bias of Linear / Conv layers is drawn from
    U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    """
    with torch.no_grad():
        for layer in module.modules():
            if isinstance(layer, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
                bound = 1.0 / math.sqrt(layer.weight[0].numel())
                layer.weight.copy_(torch.empty_like(layer.weight, device='cpu').uniform_(-bound, bound, generator=generator))
                if layer.bias is not None:
                    layer.bias.copy_(torch.empty_like(layer.bias, device='cpu').uniform_(-bound, bound, generator=generator))
    return module


def build_energy(spec, data_shape):
    """
    Build an energy network from its config spec.

    Args:
        spec (dict): Network spec with 'type' ('mlp' or 'conv') and layer options
        data_shape (tuple): Shape of one sample

    Returns:
        nn.Module: Energy network
    """
    kind = spec.get('type', 'mlp')
    if kind == 'mlp':
        return MLPEnergy(data_shape, spec.get('hidden', (512, 512, 512)), spec.get('activation', 'swish'))
    if kind == 'conv':
        return ConvEnergy(data_shape, spec.get('channels', (64, 128, 256)), spec.get('hidden', ()),
                          spec.get('activation', 'leaky_relu'))
    raise ConfigurationError(f"Unknown energy network type '{kind}'")


def build_generator(spec, latent_dim, data_shape):
    """Build a generator network from its config spec."""
    kind = spec.get('type', 'mlp')
    if kind == 'mlp':
        return MLPGenerator(latent_dim, data_shape, spec.get('hidden', (512, 512, 512)),
                            spec.get('activation', 'relu'), spec.get('output_activation', 'none'))
    if kind == 'conv':
        return ConvGenerator(latent_dim, data_shape, spec.get('channels', (256, 128, 64)),
                             spec.get('activation', 'relu'), spec.get('output_activation', 'sigmoid'))
    raise ConfigurationError(f"Unknown generator network type '{kind}'")


def build_statistics(spec, data_shape, latent_dim):
    """Build a statistics network from its config spec."""
    kind = spec.get('type', 'mlp')
    if kind == 'mlp':
        return MLPStatistics(data_shape, latent_dim, spec.get('hidden', (512, 512)),
                             spec.get('activation', 'leaky_relu'))
    if kind == 'conv':
        return ConvStatistics(data_shape, latent_dim, spec.get('channels', (64, 128)),
                              spec.get('hidden', (512,)), spec.get('activation', 'leaky_relu'))
    raise ConfigurationError(f"Unknown statistics network type '{kind}'")


@dataclass
class LatentPrior:
    """Standard normal prior N(0, I) over R^dim."""
    dim: int


@dataclass
class Models:
    """The three networks of a run plus the latent prior."""
    energy: nn.Module
    generator: nn.Module
    statistics: nn.Module
    prior: LatentPrior


def build_models(model_config, generator, dtype=torch.float32, device='cpu'):
    """
    Build and initialize all networks declared in the `model` config section.

    Args:
        model_config (dict): The `model` section of the run configuration
        generator (torch.Generator): Stream used for parameter initialization
        dtype (torch.dtype, optional): Parameter dtype. Defaults to float32.
        device (str, optional): Target device

    Returns:
        Models: Freshly initialized networks
    """
    data_shape = tuple(model_config['data_shape'])
    latent_dim = int(model_config['latent_dim'])
    if latent_dim < 1 or not data_shape or min(data_shape) < 1:
        raise ConfigurationError(f"Invalid model dimensions: data_shape={data_shape}, latent_dim={latent_dim}")

    energy_net = build_energy(model_config['energy'], data_shape)
    generator_net = build_generator(model_config['generator'], latent_dim, data_shape)
    statistics_net = build_statistics(model_config['statistics'], data_shape, latent_dim)
    # fixed order so the init stream is consumed identically every run
    for net in (energy_net, generator_net, statistics_net):
        initialize_parameters(net, generator)

    models = Models(
        energy=energy_net.to(device=device, dtype=dtype),
        generator=generator_net.to(device=device, dtype=dtype),
        statistics=statistics_net.to(device=device, dtype=dtype),
        prior=LatentPrior(latent_dim),
    )
    logger.info(f"Built networks: energy={count_parameters(models.energy)}, "
                f"generator={count_parameters(models.generator)}, "
                f"statistics={count_parameters(models.statistics)} parameters")
    return models


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())


def parameter_fingerprint(module):
    """sha256 over the raw bytes of every parameter, in registration order."""
    digest = hashlib.sha256()
    for name, p in module.named_parameters():
        digest.update(name.encode('utf-8'))
        digest.update(p.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def first_nonfinite_row(values):
    """Index of the first row holding a non-finite entry, or None."""
    bad = ~torch.isfinite(values.reshape(values.shape[0], -1)).all(dim=1)
    if bad.any():
        return int(bad.nonzero()[0, 0])
    return None


def ensure_finite(values, what):
    """Raise NumericFault if any entry of `values` is non-finite."""
    row = first_nonfinite_row(values) if values.dim() > 0 else (None if torch.isfinite(values) else 0)
    if row is not None:
        raise NumericFault(f"Non-finite {what}", row=row)
    return values


def check_sample_batch(x, data_shape):
    if x.dim() < 2 or x.shape[0] < 1:
        raise ConfigurationError(f"Sample batch must have at least one row, got shape {tuple(x.shape)}")
    if tuple(x.shape[1:]) != tuple(data_shape):
        raise ConfigurationError(f"Sample dimension mismatch: batch rows have shape {tuple(x.shape[1:])}, "
                                 f"network expects {tuple(data_shape)}")


def check_latent_batch(z, latent_dim):
    if z.dim() != 2 or z.shape[0] < 1:
        raise ConfigurationError(f"Latent batch must be an m x k matrix, got shape {tuple(z.shape)}")
    if z.shape[1] != latent_dim:
        raise ConfigurationError(f"Latent dimension mismatch: batch has k={z.shape[1]}, network expects k={latent_dim}")
    ensure_finite(z, 'latent input')


def energy(E, x):
    """
    Energy per sample row.

    Args:
        E (nn.Module): Energy network (exposes `data_shape`)
        x (torch.Tensor): Sample batch of shape (m, *data_shape)

    Returns:
        torch.Tensor: Energies of shape (m,)

    Raises:
        ConfigurationError: If x does not match the network input shape
        NumericFault: If any energy is non-finite
    """
    check_sample_batch(x, E.data_shape)
    return ensure_finite(E(x), 'energy')


def generate(G, z):
    """Deterministic generator output G(z), shape (m, *data_shape)."""
    check_latent_batch(z, G.latent_dim)
    return G(z)


def statistic(T, x, z):
    """T(x_i, z_i) for every row pair, shape (m,)."""
    if x.shape[0] != z.shape[0]:
        raise ConfigurationError(f"Row-count mismatch between samples ({x.shape[0]}) and latents ({z.shape[0]})")
    check_sample_batch(x, T.data_shape)
    check_latent_batch(z, T.latent_dim)
    return ensure_finite(T(x, z), 'statistic')


def sample_prior(prior, m, generator, dtype=torch.float32, device='cpu'):
    """
    Draw m rows from N(0, I_k).

    Args:
        prior (LatentPrior): The prior
        m (int): Number of rows, m >= 1
        generator (torch.Generator): Random stream

    Returns:
        torch.Tensor: Latent batch of shape (m, k)
    """
    if int(m) < 1:
        raise ConfigurationError(f"Prior sample count must be >= 1, got {m}")
    return torch.randn(int(m), prior.dim, generator=generator, dtype=dtype).to(device)


def _input_gradient(output, inputs, create_graph):
    grad, = torch.autograd.grad(output.sum(), inputs, create_graph=create_graph, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(inputs)
    return grad


def grad_energy_x(E, x, create_graph=False):
    """
    Rows of dE(x_i)/dx_i.

    Args:
        E (nn.Module): Energy network
        x (torch.Tensor): Sample batch
        create_graph (bool, optional): Keep the graph for higher-order
            derivatives (needed when the gradient enters a loss)

    Returns:
        torch.Tensor: Gradient with the same shape as x
    """
    if not x.requires_grad:
        x = x.detach().requires_grad_(True)
    with torch.enable_grad():
        grad = _input_gradient(energy(E, x), x, create_graph)
    return ensure_finite(grad, 'energy gradient')


def grad_energy_z(E, G, z, create_graph=False):
    """Rows of the chain-rule gradient d E(G(z_i)) / d z_i."""
    z = z.detach().requires_grad_(True)
    with torch.enable_grad():
        grad = _input_gradient(energy(E, generate(G, z)), z, create_graph)
    return ensure_finite(grad, 'latent energy gradient')
