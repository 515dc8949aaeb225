#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Chain Comparison Module

Latent-space versus visible-space MALA on the same trained model.

Both chains start from matched points (the visible chain at G(z0) where the
latent chain starts at z0) and draw from identically seeded streams, so the
sampling space is the only difference between the two runs.
"""

import json
import logging
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
from scipy.stats import binomtest

from errors import ConfigurationError
from mode_eval import nearest_mode_assign
from networks import energy, generate, sample_prior
from random_streams import derive_seed, make_generator
from sampler import run_mala, run_visible_mala

# Set up logging
logger = logging.getLogger(__name__)

COMPARISON_REPORT = 'comparison_report.json'


@dataclass
class ChainQualityReport:
    """
    Quality summary of one batch of chains.

    `in_mode_fraction` (and its per-chain breakdown) is only set when mode
    centers are known.
    """
    space: str
    acceptance_rate: float
    mean_final_energy: float
    chain_count: int
    kept_per_chain: int
    in_mode_fraction: float = None
    per_chain_in_mode: list = field(default_factory=list)
    archive: str = None

    def as_dict(self):
        return asdict(self)


def _report(space, result, E, centers, sigma, cutoff):
    kept, m = result.chain.shape[0], result.chain.shape[1]
    with torch.no_grad():
        final_energy = float(energy(E, result.final).double().mean())
    report = ChainQualityReport(
        space=space,
        acceptance_rate=float(result.acceptance_rate),
        mean_final_energy=final_energy,
        chain_count=int(m),
        kept_per_chain=int(kept),
    )
    if centers is not None:
        _, in_mode = nearest_mode_assign(result.samples, centers, sigma, cutoff)
        per_chain = in_mode.double().reshape(kept, m).mean(0)
        report.in_mode_fraction = float(in_mode.double().mean())
        report.per_chain_in_mode = per_chain.tolist()
    return report


def compare_chains(E, G, prior, cfg_latent, cfg_visible, generator, count=64,
                   centers=None, sigma=None, cutoff=3.0):
    """
    Run latent and visible chains from matched starting points.

    Args:
        E (nn.Module): Energy network
        G (nn.Module): Generator
        prior (LatentPrior): Latent prior for the initial points
        cfg_latent (MALAConfig): Latent chain configuration
        cfg_visible (MALAConfig): Visible chain configuration
        generator (torch.Generator): Stream for z0 and the chain seed
        count (int, optional): Number of chains. Defaults to 64.
        centers (array-like, optional): True mode centers (2D data)
        sigma (float, optional): Mode sigma for the in-mode test
        cutoff (float, optional): In-mode radius in units of sigma

    Returns:
        tuple: (latent ChainQualityReport, visible ChainQualityReport,
            latent ChainResult, visible ChainResult)

    Raises:
        ConfigurationError: If the two configurations differ in chain length or burn-in
    """
    if (cfg_latent.chain_length, cfg_latent.burn_in) != (cfg_visible.chain_length, cfg_visible.burn_in):
        raise ConfigurationError("Latent and visible chains must share chain_length and burn_in "
                                 f"(got {cfg_latent.chain_length}/{cfg_latent.burn_in} and "
                                 f"{cfg_visible.chain_length}/{cfg_visible.burn_in})")
    if centers is not None and sigma is None:
        raise ConfigurationError("In-mode fractions need the mode sigma")

    z0 = sample_prior(prior, count, generator)
    with torch.no_grad():
        x0 = generate(G, z0)
    chain_seed = derive_seed(generator)

    latent = run_mala(z0, E, G, cfg_latent, make_generator(chain_seed))
    visible = run_visible_mala(x0, E, cfg_visible, make_generator(chain_seed))

    latent_report = _report('latent', latent, E, centers, sigma, cutoff)
    visible_report = _report('visible', visible, E, centers, sigma, cutoff)
    logger.info(f"Latent chains: acceptance {latent_report.acceptance_rate:.3f}, "
                f"final energy {latent_report.mean_final_energy:.4f}, in-mode {latent_report.in_mode_fraction}")
    logger.info(f"Visible chains: acceptance {visible_report.acceptance_rate:.3f}, "
                f"final energy {visible_report.mean_final_energy:.4f}, in-mode {visible_report.in_mode_fraction}")
    return latent_report, visible_report, latent, visible


@dataclass
class SignTest:
    """One-sided sign test that the latent fraction exceeds the visible one."""
    wins: int
    losses: int
    ties: int
    p_value: float

    def as_dict(self):
        return asdict(self)


def sign_test(latent_fractions, visible_fractions):
    """
    Sign test over matched chains.

    Ties are dropped; with no untied pair the p-value is 1.
    """
    diff = np.asarray(latent_fractions, dtype=np.float64) - np.asarray(visible_fractions, dtype=np.float64)
    wins, losses = int((diff > 0).sum()), int((diff < 0).sum())
    ties = int(diff.shape[0]) - wins - losses
    n = wins + losses
    p_value = 1.0 if n == 0 else float(binomtest(wins, n, 0.5, alternative='greater').pvalue)
    return SignTest(wins=wins, losses=losses, ties=ties, p_value=p_value)


def write_comparison(output_dir, latent_report, visible_report, extra=None):
    """Write both reports (plus the sign test when in-mode fractions exist) as JSON."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    payload = {'latent': latent_report.as_dict(), 'visible': visible_report.as_dict()}
    if latent_report.per_chain_in_mode and visible_report.per_chain_in_mode:
        payload['sign_test'] = sign_test(latent_report.per_chain_in_mode, visible_report.per_chain_in_mode).as_dict()
    payload.update(extra or {})
    path = output_dir / COMPARISON_REPORT
    path.write_text(json.dumps(payload, indent=2))
    logger.info(f"Chain comparison written to {path}")
    return path
