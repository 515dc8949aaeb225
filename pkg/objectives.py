#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Objectives Module

Losses and estimators used to train the energy function, the generator and
the statistics network:

- shuffle_marginals     per-dimension shuffle of a latent batch
- mi_jsd                Jensen-Shannon mutual information lower bound
- gradient_penalty      zero-centered penalty ||dE/dx||^2 on real data
- energy_loss           E(real) - E(fake) + lambda * penalty
- generator_loss        E(G(z)) - I_JSD(G(z), z)
- statistics_loss       -I_JSD, minimized by the statistics network
- score_matching_diag   full score matching objective (diagnostic only)

Two MI variants are selectable: 'softplus' (the bound itself, default) and
'logistic' (the log-sigmoid form applied exactly as written, see DESIGN.md).
"""

import copy
import logging
import math
from dataclasses import dataclass, asdict

import torch

from errors import ConfigurationError, ScopeError
from networks import energy, generate, statistic, grad_energy_x, ensure_finite

# Set up logging
logger = logging.getLogger(__name__)

MI_VARIANTS = ('softplus', 'logistic')
METRIC_COLUMNS = ('step', 'loss_E', 'loss_G', 'loss_T', 'energy_real', 'energy_fake', 'penalty', 'mi_estimate')
SCORE_MATCHING_MAX_DIM = 16

NAN = float('nan')


@dataclass
class LossBreakdown:
    """Scalar terms of one training iteration, one metrics CSV row."""
    energy_real: float = NAN
    energy_fake: float = NAN
    penalty: float = NAN
    mi_estimate: float = NAN
    loss_E: float = NAN
    loss_G: float = NAN
    loss_T: float = NAN

    def as_row(self, step):
        return {'step': int(step), **asdict(self)}


@dataclass
class ShuffledLatentBatch:
    """Latent batch whose columns are independent permutations of `source`."""
    values: torch.Tensor
    source: torch.Tensor


def softplus(a):
    """Overflow-safe softplus: max(a, 0) + log1p(exp(-|a|))."""
    return torch.clamp(a, min=0) + torch.log1p(torch.exp(-a.abs()))


def _latent_values(z):
    return z.values if isinstance(z, ShuffledLatentBatch) else z


def _check_variant(variant):
    if variant not in MI_VARIANTS:
        raise ConfigurationError(f"Unknown mi_variant '{variant}', expected one of {MI_VARIANTS}")


def shuffle_marginals(z, generator):
    """
    Independently permute every latent column across the batch.

    Breaks the pairing between G(z) and z so that (G(z), shuffled z)
    approximates draws from the product of marginals.

    Args:
        z (torch.Tensor): Latent batch (m, k) with m >= 2
        generator (torch.Generator): Random stream

    Returns:
        ShuffledLatentBatch: The shuffled batch
    """
    if z.dim() != 2 or z.shape[0] < 2:
        raise ConfigurationError(f"Per-dimension shuffle needs at least 2 rows, got shape {tuple(z.shape)}")
    keys = torch.rand(z.shape, generator=generator)
    order = keys.argsort(dim=0).to(z.device)
    return ShuffledLatentBatch(values=z.gather(0, order), source=z)


def mi_jsd(T, x, z_joint, z_marg):
    """
    Jensen-Shannon MI estimate:
    mean(-sp(-T(x, z_joint))) - mean(sp(T(x, z_marg))).

    Args:
        T (nn.Module): Statistics network
        x (torch.Tensor): Samples paired row-wise with z_joint
        z_joint (torch.Tensor): Latents of the joint pairs
        z_marg (ShuffledLatentBatch or torch.Tensor): Shuffled latents

    Returns:
        torch.Tensor: Scalar estimate (differentiable)
    """
    t_joint = statistic(T, x, _latent_values(z_joint))
    t_marg = statistic(T, x, _latent_values(z_marg))
    return (-softplus(-t_joint)).mean() - softplus(t_marg).mean()


def logistic_entropy_loss(T, x, z_joint, z_marg):
    """
    Log-sigmoid form mean(log s(T(x, z))) - mean(log(1 - s(T(x, z~)))).

    Uses log s(a) = -sp(-a) and -log(1 - s(b)) = sp(b).
    """
    t_joint = statistic(T, x, _latent_values(z_joint))
    t_marg = statistic(T, x, _latent_values(z_marg))
    return (-softplus(-t_joint)).mean() + softplus(t_marg).mean()


def gradient_penalty(E, x_real, create_graph=True):
    """
    Mean squared norm of the energy gradient on real data.

    Args:
        E (nn.Module): Energy network
        x_real (torch.Tensor): Batch drawn from the data distribution
        create_graph (bool, optional): Keep the graph so the penalty can be
            differentiated w.r.t. the energy parameters. Defaults to True.

    Returns:
        torch.Tensor: Scalar penalty, >= 0
    """
    grad = grad_energy_x(E, x_real, create_graph=create_graph)
    return grad.flatten(1).pow(2).sum(1).mean()


def energy_loss(E, x_real, x_fake, penalty_coeff):
    """
    Energy objective with the zero-centered gradient penalty.

    Args:
        E (nn.Module): Energy network
        x_real (torch.Tensor): Real batch
        x_fake (torch.Tensor): Generated batch (treated as constant)
        penalty_coeff (float): lambda >= 0

    Returns:
        tuple: (loss tensor, LossBreakdown)
    """
    if penalty_coeff < 0:
        raise ConfigurationError(f"Penalty coefficient must be >= 0, got {penalty_coeff}")
    if x_real.shape[0] != x_fake.shape[0]:
        raise ConfigurationError(f"Batch-size mismatch: real={x_real.shape[0]}, fake={x_fake.shape[0]}")

    e_real = energy(E, x_real).mean()
    e_fake = energy(E, x_fake.detach()).mean()
    penalty = gradient_penalty(E, x_real)
    loss = ensure_finite(e_real - e_fake + penalty_coeff * penalty, 'energy loss')
    breakdown = LossBreakdown(
        energy_real=e_real.item(),
        energy_fake=e_fake.item(),
        penalty=penalty.item(),
        loss_E=loss.item(),
    )
    return loss, breakdown


def generator_terms(E, T, G, z, z_marg, variant='softplus'):
    """
    Generator loss plus the generated batch it was computed from.

    Returns:
        tuple: (loss tensor, LossBreakdown, x_fake)
    """
    _check_variant(variant)
    x_fake = generate(G, z)
    e_fake = energy(E, x_fake).mean()
    if variant == 'softplus':
        mi = mi_jsd(T, x_fake, z, z_marg)
    else:
        mi = -logistic_entropy_loss(T, x_fake, z, z_marg)
    loss = ensure_finite(e_fake - mi, 'generator loss')
    breakdown = LossBreakdown(energy_fake=e_fake.item(), mi_estimate=mi.item(), loss_G=loss.item())
    return loss, breakdown, x_fake


def generator_loss(E, T, G, z, z_marg, variant='softplus'):
    """
    Generator objective mean(E(G(z))) - I_JSD(G(z), z).

    The returned loss depends on all three networks; callers differentiate
    it with respect to the generator parameters only (see trainer).

    Returns:
        tuple: (loss tensor, LossBreakdown)
    """
    loss, breakdown, _ = generator_terms(E, T, G, z, z_marg, variant)
    return loss, breakdown


def statistics_loss(T, x_fake, z, z_marg, variant='softplus'):
    """
    Statistics network objective. Minimizing it w.r.t. phi tightens the bound.

    x_fake is detached, so gradients reach only the statistics network.

    Returns:
        torch.Tensor: Scalar loss
    """
    _check_variant(variant)
    x_fake = x_fake.detach()
    if variant == 'softplus':
        loss = -mi_jsd(T, x_fake, z, z_marg)
    else:
        loss = logistic_entropy_loss(T, x_fake, z, z_marg)
    return ensure_finite(loss, 'statistics loss')


def score_matching_diag(E, x, h=1e-3):
    """
    Full score matching objective with a finite-difference Hessian diagonal.

    mean_i [ 1/2 ||dE/dx(x_i)||^2 - sum_j d2E/dx_j^2 (x_i) ]

    Evaluation only; computed on a float64 copy of the network.

    Args:
        E (nn.Module): Energy network
        x (torch.Tensor): Sample batch, at most 16 features per sample
        h (float, optional): Second-difference step. Defaults to 1e-3.

    Returns:
        float: Objective value
    """
    d = math.prod(E.data_shape)
    if d > SCORE_MATCHING_MAX_DIM:
        raise ScopeError(f"score_matching_diag is a diagnostic for d <= {SCORE_MATCHING_MAX_DIM}, got d={d}")
    if h <= 0:
        raise ConfigurationError(f"Finite-difference step must be positive, got {h}")

    E64 = copy.deepcopy(E).double()
    x64 = x.detach().double()
    grad = grad_energy_x(E64, x64)
    first = 0.5 * grad.flatten(1).pow(2).sum(1)

    with torch.no_grad():
        center = energy(E64, x64)
        trace = torch.zeros_like(center)
        flat = x64.flatten(1)
        for j in range(d):
            step = torch.zeros_like(flat)
            step[:, j] = h
            plus = energy(E64, (flat + step).view_as(x64))
            minus = energy(E64, (flat - step).view_as(x64))
            trace += (plus - 2.0 * center + minus) / (h * h)
    return float((first - trace).mean())
