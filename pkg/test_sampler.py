#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for latent- and visible-space MALA.
"""

import math

import pytest
import torch

from errors import ConfigurationError, NumericFault
from networks import ConstantEnergy, IdentityGenerator, QuadraticEnergy
from random_streams import make_generator
from sampler import (MALAConfig, init_chain, mala_accept_prob, mala_log_accept, mala_propose, run_mala,
                     run_visible_mala)


def _quadratic(dim=2):
    return QuadraticEnergy(dim).double(), IdentityGenerator(dim)


class TestConfig:
    def test_burn_in_must_leave_samples(self):
        with pytest.raises(ConfigurationError):
            MALAConfig(chain_length=10, burn_in=10)

    def test_overrides(self):
        cfg = MALAConfig.from_config({'step_size': 0.01, 'chain_length': 20, 'burn_in': 5, 'space': 'latent'},
                                     step_size=0.2, burn_in=None)
        assert cfg.step_size == 0.2 and cfg.burn_in == 5 and cfg.kept == 15


class TestProposal:
    def test_zero_drift_without_noise(self):
        E, G = ConstantEnergy((2,)), IdentityGenerator(2)
        cfg = MALAConfig(step_size=0.1)
        z = torch.tensor([[0.3, -0.7]], dtype=torch.float64)
        state = init_chain(z, E, G, cfg)
        proposal = mala_propose(state, E, G, cfg, make_generator(0), noise=torch.zeros_like(z))
        assert torch.equal(proposal, z)

    def test_analytic_drift(self):
        E, G = _quadratic()
        cfg = MALAConfig(step_size=0.1)
        z = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        state = init_chain(z, E, G, cfg)
        proposal = mala_propose(state, E, G, cfg, make_generator(0), noise=torch.zeros_like(z))
        assert torch.allclose(proposal, torch.tensor([[0.9, 0.0]], dtype=torch.float64))

    def test_proposal_covariance(self):
        E, G = ConstantEnergy((2,)), IdentityGenerator(2)
        cfg = MALAConfig(step_size=0.01)
        z = torch.zeros(10_000, 2, dtype=torch.float64)
        state = init_chain(z, E, G, cfg)
        proposals = mala_propose(state, E, G, cfg, make_generator(1))
        cov = torch.cov(proposals.T)
        expected = 2 * cfg.step_size * torch.eye(2, dtype=torch.float64)
        assert torch.allclose(cov, expected, atol=0.05 * 2 * cfg.step_size)


class TestAcceptance:
    def test_identical_point(self):
        E, G = _quadratic()
        z = torch.tensor([[0.4, -1.2]], dtype=torch.float64)
        assert mala_accept_prob(z, z.clone(), E, G, MALAConfig(step_size=0.1)).item() == 1.0

    def test_constant_energy_always_one(self):
        E, G = ConstantEnergy((2,)), IdentityGenerator(2)
        g = make_generator(0)
        z = torch.randn(5, 2, generator=g, dtype=torch.float64)
        zt = torch.randn(5, 2, generator=g, dtype=torch.float64)
        r = mala_accept_prob(z, zt, E, G, MALAConfig(step_size=0.1))
        assert torch.allclose(r, torch.ones(5, dtype=torch.float64))

    def test_hand_evaluated_ratio(self):
        E, G = _quadratic(1)
        z = torch.tensor([[1.0]], dtype=torch.float64)
        zt = torch.tensor([[0.8]], dtype=torch.float64)
        cfg = MALAConfig(step_size=0.1)
        u, ut = 0.5, 0.32
        fwd = -((0.8 - 1.0 + 0.1 * 1.0) ** 2) / (4 * 0.1)
        bwd = -((1.0 - 0.8 + 0.1 * 0.8) ** 2) / (4 * 0.1)
        expected = (u - ut) + bwd - fwd
        assert expected == pytest.approx(0.009, abs=1e-12)
        assert mala_log_accept(z, zt, E, G, cfg).item() == pytest.approx(expected, abs=1e-12)
        assert mala_accept_prob(z, zt, E, G, cfg).item() == pytest.approx(math.exp(0.009), abs=1e-9)

    def test_reversibility(self):
        E, G = _quadratic(3)
        g = make_generator(2)
        z = torch.randn(64, 3, generator=g, dtype=torch.float64)
        zt = z + 0.5 * torch.randn(64, 3, generator=g, dtype=torch.float64)
        cfg = MALAConfig(step_size=0.05)
        total = mala_log_accept(z, zt, E, G, cfg) + mala_log_accept(zt, z, E, G, cfg)
        assert total.abs().max().item() < 1e-8

    def test_extreme_ratio_stays_finite(self):
        E, G = QuadraticEnergy(1, scale=1e6).double(), IdentityGenerator(1)
        z = torch.tensor([[10.0]], dtype=torch.float64)
        zt = torch.tensor([[0.0]], dtype=torch.float64)
        r = mala_accept_prob(z, zt, E, G, MALAConfig(step_size=1e-3))
        assert torch.isfinite(r).all()


class TestChains:
    def test_one_kept_position(self):
        E, G = _quadratic()
        z0 = torch.zeros(4, 2, dtype=torch.float64)
        result = run_mala(z0, E, G, MALAConfig(step_size=0.1, chain_length=6, burn_in=5), make_generator(0))
        assert result.chain.shape == (1, 4, 2)
        assert result.final.shape == (4, 2)

    def test_forced_rejection_stays_put(self):
        E, G = _quadratic()
        z0 = torch.randn(3, 2, generator=make_generator(0), dtype=torch.float64)
        result = run_mala(z0, E, G, MALAConfig(step_size=0.1, chain_length=20, burn_in=0), make_generator(1),
                          force_reject=True)
        assert all(torch.equal(step, z0) for step in result.chain)
        assert result.acceptance_rate == 0.0

    def test_constant_energy_random_walk(self):
        E = ConstantEnergy((2,))
        x0 = torch.zeros(16, 2, dtype=torch.float64)
        result = run_visible_mala(x0, E, MALAConfig(step_size=0.1, chain_length=30, burn_in=0), make_generator(0))
        assert result.acceptance_rate == 1.0

    def test_same_seed_same_chain(self):
        E, G = _quadratic()
        cfg = MALAConfig(step_size=0.1, chain_length=10, burn_in=2)
        z0 = torch.randn(5, 2, generator=make_generator(0), dtype=torch.float64)
        a = run_mala(z0, E, G, cfg, make_generator(9))
        b = run_mala(z0, E, G, cfg, make_generator(9))
        assert torch.equal(a.chain, b.chain)

    def test_non_finite_start_rejected(self):
        E, G = _quadratic()
        z0 = torch.tensor([[0.0, 0.0], [float('nan'), 1.0]], dtype=torch.float64)
        with pytest.raises(NumericFault) as info:
            run_mala(z0, E, G, MALAConfig(chain_length=2, burn_in=1), make_generator(0))
        assert info.value.row == 1
        assert info.value.dump is not None

    def test_zero_acceptance_warns(self, caplog):
        E, G = _quadratic()
        z0 = torch.zeros(2, 2, dtype=torch.float64)
        with caplog.at_level('WARNING'):
            run_mala(z0, E, G, MALAConfig(chain_length=3, burn_in=1), make_generator(0), force_reject=True)
        assert 'step size' in caplog.text

    @pytest.mark.slow
    @pytest.mark.parametrize('space', ['latent', 'visible'])
    def test_gaussian_moments(self, space):
        E, G = _quadratic()
        cfg = MALAConfig(step_size=0.05, chain_length=550, burn_in=50)
        z0 = torch.randn(1000, 2, generator=make_generator(4), dtype=torch.float64)
        if space == 'latent':
            result = run_mala(z0, E, G, cfg, make_generator(5))
        else:
            result = run_visible_mala(z0, E, cfg, make_generator(5))
        samples = result.chain.reshape(-1, 2)
        assert samples.mean(0).abs().max().item() < 0.05
        cov = torch.cov(samples.T)
        assert (cov - torch.eye(2, dtype=torch.float64)).abs().max().item() < 0.05

    def test_latent_target_with_prior(self):
        E, G = ConstantEnergy((2,)), IdentityGenerator(2)
        cfg = MALAConfig(step_size=0.1, include_prior=True)
        z = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        state = init_chain(z, E, G, cfg)
        assert torch.allclose(state.gradient, z)
