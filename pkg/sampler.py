#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Sampler Module

Metropolis-adjusted Langevin sampling from a trained model.

In latent space the chain targets exp(-E(G(z))) (optionally times the N(0, I)
prior); in visible space it targets exp(-E(x)) directly. Every chain row of a
batch is an independent chain; all rows share one random stream per call.
"""

import logging
import math
from dataclasses import dataclass, replace

import torch

from errors import ConfigurationError, NumericFault
from networks import energy, generate, ensure_finite, first_nonfinite_row, check_latent_batch, check_sample_batch

try:
    from tqdm import tqdm
    TQDM_AVAILABLE = True
except ImportError:
    TQDM_AVAILABLE = False

# Set up logging
logger = logging.getLogger(__name__)

SPACES = ('latent', 'visible')


@dataclass
class MALAConfig:
    """
    Chain hyperparameters.

    Attributes:
        step_size (float): Langevin step alpha > 0
        chain_length (int): Steps per chain
        burn_in (int): Leading steps discarded, burn_in < chain_length
        space (str): 'latent' or 'visible'
        include_prior (bool): Add the latent prior 1/2 ||z||^2 to the target
    """
    step_size: float = 0.01
    chain_length: int = 200
    burn_in: int = 100
    space: str = 'latent'
    include_prior: bool = False

    def __post_init__(self):
        if not self.step_size > 0:
            raise ConfigurationError(f"MALA step size must be > 0, got {self.step_size}")
        if self.chain_length < 1:
            raise ConfigurationError(f"Chain length must be >= 1, got {self.chain_length}")
        if not 0 <= self.burn_in < self.chain_length:
            raise ConfigurationError(f"Burn-in must satisfy 0 <= burn_in < chain_length "
                                     f"(got burn_in={self.burn_in}, chain_length={self.chain_length})")
        if self.space not in SPACES:
            raise ConfigurationError(f"Unknown chain space '{self.space}', expected one of {SPACES}")

    @classmethod
    def from_config(cls, sampler_config, **overrides):
        """Build from the `sampler` config section; non-None overrides win."""
        values = {
            'step_size': float(sampler_config['step_size']),
            'chain_length': int(sampler_config['chain_length']),
            'burn_in': int(sampler_config['burn_in']),
            'space': sampler_config['space'],
            'include_prior': bool(sampler_config.get('include_prior', False)),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def kept(self):
        return self.chain_length - self.burn_in


@dataclass
class ChainState:
    """
    Current point of a batch of chains.

    `current_energy` and `gradient` are the target energy and its gradient at
    `position`; they are cached so each step evaluates the network once.
    """
    position: torch.Tensor
    current_energy: torch.Tensor
    gradient: torch.Tensor
    accepted_count: torch.Tensor
    proposed_count: int = 0

    @property
    def acceptance_rate(self):
        if self.proposed_count == 0:
            return float('nan')
        return float(self.accepted_count.sum()) / (self.proposed_count * self.position.shape[0])


def target_energy(position, E, G, cfg, with_grad=True):
    """
    Target energy U per chain row and, optionally, its gradient.

    Args:
        position (torch.Tensor): Chain positions, latents (m, k) or samples (m, *data_shape)
        E (nn.Module): Energy network
        G (nn.Module): Generator (ignored in visible space)
        cfg (MALAConfig): Chain configuration
        with_grad (bool, optional): Also return dU/dposition

    Returns:
        tuple: (energies (m,), gradient or None)
    """
    position = position.detach().requires_grad_(with_grad)
    with torch.set_grad_enabled(with_grad):
        if cfg.space == 'latent':
            u = energy(E, generate(G, position))
            if cfg.include_prior:
                u = u + 0.5 * position.pow(2).sum(1)
        else:
            u = energy(E, position)
        grad = None
        if with_grad:
            grad, = torch.autograd.grad(u.sum(), position, allow_unused=True)
            if grad is None:
                grad = torch.zeros_like(position)
            grad = ensure_finite(grad, f'{cfg.space} chain gradient')
    return u.detach(), grad


def init_chain(position, E, G, cfg):
    """ChainState at `position` with nothing proposed yet."""
    if cfg.space == 'latent':
        check_latent_batch(position, G.latent_dim)
    else:
        check_sample_batch(position, E.data_shape)
    u, grad = target_energy(position, E, G, cfg)
    return ChainState(position=position.detach().clone(), current_energy=u, gradient=grad,
                      accepted_count=torch.zeros(position.shape[0], dtype=torch.int64))


def _log_transition(to, frm, grad_frm, alpha):
    """log q(to | frm) up to a constant: -||to - frm + alpha grad(frm)||^2 / (4 alpha)."""
    diff = (to - frm + alpha * grad_frm).flatten(1)
    return -diff.pow(2).sum(1) / (4.0 * alpha)


def log_accept_ratio(position, u, grad, proposal, u_prop, grad_prop, alpha):
    """log r from cached energies and gradients at both points."""
    return (u - u_prop
            + _log_transition(position, proposal, grad_prop, alpha)
            - _log_transition(proposal, position, grad, alpha))


def mala_propose(state, E, G, cfg, generator, noise=None):
    """
    Langevin proposal z - alpha * dU/dz + sqrt(2 alpha) * eps.

    Args:
        state (ChainState): Current chains
        E (nn.Module): Energy network
        G (nn.Module): Generator (unused in visible space)
        cfg (MALAConfig): Chain configuration
        generator (torch.Generator): Random stream for eps
        noise (torch.Tensor, optional): Use this eps instead of drawing one

    Returns:
        torch.Tensor: Proposed positions
    """
    if noise is None:
        noise = torch.randn(state.position.shape, generator=generator,
                            dtype=state.position.dtype).to(state.position.device)
    alpha = cfg.step_size
    return state.position - alpha * state.gradient + math.sqrt(2.0 * alpha) * noise


def mala_log_accept(z, z_tilde, E, G, cfg):
    """Per-row log acceptance ratio for moving from z to z_tilde."""
    u, grad = target_energy(z, E, G, cfg)
    u_prop, grad_prop = target_energy(z_tilde, E, G, cfg)
    return log_accept_ratio(z.detach(), u, grad, z_tilde.detach(), u_prop, grad_prop, cfg.step_size)


def mala_accept_prob(z, z_tilde, E, G, cfg):
    """
    Acceptance ratio r = p(z~) q(z | z~) / (p(z) q(z~ | z)) per row.

    The ratio is exponentiated from log space and capped at the largest
    finite value of the dtype; the accept decision itself compares in log
    space and uses min(1, r).
    """
    log_r = mala_log_accept(z, z_tilde, E, G, cfg)
    finfo = torch.finfo(log_r.dtype)
    return torch.exp(log_r.clamp(max=math.log(finfo.max))).clamp(max=finfo.max)


def mala_step(state, E, G, cfg, generator, force_reject=False, noise=None):
    """
    One propose/accept step for every chain row, in place.

    Returns:
        torch.Tensor: Boolean mask of accepted rows
    """
    proposal = mala_propose(state, E, G, cfg, generator, noise=noise)
    try:
        u_prop, grad_prop = target_energy(proposal, E, G, cfg)
    except NumericFault as e:
        dump = state.position[e.row].tolist() if e.row is not None else None
        raise NumericFault(f"MALA chain aborted at step {state.proposed_count + 1}: {e}",
                           row=e.row, dump=dump) from e

    log_r = log_accept_ratio(state.position, state.current_energy, state.gradient,
                             proposal.detach(), u_prop, grad_prop, cfg.step_size)
    log_u = torch.log(torch.rand(log_r.shape, generator=generator, dtype=log_r.dtype)).to(log_r.device)
    accept = log_u < log_r
    if force_reject:
        accept = torch.zeros_like(accept)

    mask = accept.view(-1, *([1] * (proposal.dim() - 1)))
    state.position = torch.where(mask, proposal.detach(), state.position)
    state.gradient = torch.where(mask, grad_prop, state.gradient)
    state.current_energy = torch.where(accept, u_prop, state.current_energy)
    state.accepted_count += accept.to(torch.int64).cpu()
    state.proposed_count += 1
    return accept


@dataclass
class ChainResult:
    """
    Output of a batch of chains.

    Attributes:
        chain (torch.Tensor): Kept positions, (kept, m, ...) in step order
        samples (torch.Tensor): Data-space samples of the kept positions,
            flattened over (kept, m); G(chain) in latent space
        start (torch.Tensor): Data-space samples at the initial positions
        acceptance_rate (float): accepted / proposed over all steps and rows
        per_chain_acceptance (torch.Tensor): Acceptance rate of every row
        state (ChainState): Final chain state
    """
    chain: torch.Tensor
    samples: torch.Tensor
    start: torch.Tensor
    acceptance_rate: float
    per_chain_acceptance: torch.Tensor
    state: ChainState

    @property
    def final(self):
        """Data-space samples at the last step, one per chain."""
        m = self.chain.shape[1]
        return self.samples[-m:]


def _to_data_space(positions, G, cfg, batch_size=1024):
    if cfg.space == 'visible':
        return positions
    with torch.no_grad():
        return torch.cat([generate(G, chunk) for chunk in positions.split(batch_size)])


def _run_chain(position0, E, G, cfg, generator, force_reject=False, noise=None):
    if position0.shape[0] < 1:
        raise ConfigurationError("At least one chain is required")
    bad = first_nonfinite_row(position0)
    if bad is not None:
        raise NumericFault("Non-finite initial chain position", row=bad, dump=position0[bad].tolist())

    state = init_chain(position0, E, G, cfg)
    kept = []
    steps = range(1, cfg.chain_length + 1)
    iterator = tqdm(steps, desc=f"MALA ({cfg.space})", leave=False,
                    disable=not logger.isEnabledFor(logging.DEBUG)) if TQDM_AVAILABLE else steps
    for t in iterator:
        mala_step(state, E, G, cfg, generator, force_reject=force_reject, noise=noise)
        if t > cfg.burn_in:
            kept.append(state.position.clone())

    chain = torch.stack(kept)
    rate = state.acceptance_rate
    if state.accepted_count.sum() == 0:
        logger.warning(f"MALA accepted no proposals in {state.proposed_count} steps "
                       f"(step size {cfg.step_size}); try a smaller --step-size")
    else:
        logger.info(f"MALA ({cfg.space}): {position0.shape[0]} chains x {cfg.chain_length} steps, "
                    f"acceptance rate {rate:.3f}")
    return ChainResult(
        chain=chain,
        samples=_to_data_space(chain.flatten(0, 1), G, cfg),
        start=_to_data_space(position0.detach(), G, cfg),
        acceptance_rate=rate,
        per_chain_acceptance=state.accepted_count.double() / state.proposed_count,
        state=state,
    )


def run_mala(z0, E, G, cfg, generator, force_reject=False, noise=None):
    """
    Run latent-space MALA chains started at z0.

    Args:
        z0 (torch.Tensor): Initial latents (m, k), typically prior draws
        E (nn.Module): Energy network
        G (nn.Module): Generator
        cfg (MALAConfig): Chain configuration (space is forced to latent)
        generator (torch.Generator): Random stream
        force_reject (bool, optional): Reject every proposal (test hook)
        noise (torch.Tensor, optional): Fixed eps for every step (test hook)

    Returns:
        ChainResult: Kept latents, G over them and the acceptance rate
    """
    return _run_chain(z0, E, G, replace(cfg, space='latent'), generator, force_reject, noise)


def run_visible_mala(x0, E, cfg, generator, force_reject=False, noise=None):
    """
    Run MALA chains directly in data space, target exp(-E(x)).

    Returns:
        ChainResult: Kept samples and the acceptance rate
    """
    return _run_chain(x0, E, None, replace(cfg, space='visible', include_prior=False),
                      generator, force_reject, noise)
