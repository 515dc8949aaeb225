#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for the latent versus visible chain comparison.
"""

import json

import pytest
import torch

from chain_comparison import COMPARISON_REPORT, compare_chains, sign_test, write_comparison
from errors import ConfigurationError
from networks import IdentityGenerator, LatentPrior, QuadraticEnergy
from random_streams import make_generator
from sampler import MALAConfig


def _setup():
    return QuadraticEnergy(2), IdentityGenerator(2), LatentPrior(2)


def test_identity_generator_gives_identical_chains():
    E, G, prior = _setup()
    cfg = MALAConfig(step_size=0.05, chain_length=20, burn_in=10)
    latent, visible, latent_result, visible_result = compare_chains(
        E, G, prior, cfg, cfg, make_generator(0), count=16, centers=torch.zeros(1, 2), sigma=1.0)
    assert torch.allclose(latent_result.chain, visible_result.chain)
    assert latent.acceptance_rate == pytest.approx(visible.acceptance_rate)
    assert latent.chain_count == 16 and latent.kept_per_chain == 10
    assert len(latent.per_chain_in_mode) == 16
    assert 0.0 <= latent.in_mode_fraction <= 1.0


def test_without_centers_no_in_mode_fraction():
    E, G, prior = _setup()
    cfg = MALAConfig(step_size=0.05, chain_length=4, burn_in=2)
    latent, visible, _, _ = compare_chains(E, G, prior, cfg, cfg, make_generator(0), count=4)
    assert latent.in_mode_fraction is None and visible.per_chain_in_mode == []


def test_mismatched_chain_lengths():
    E, G, prior = _setup()
    with pytest.raises(ConfigurationError):
        compare_chains(E, G, prior, MALAConfig(chain_length=10, burn_in=5), MALAConfig(chain_length=12, burn_in=5),
                       make_generator(0))


def test_centers_need_sigma():
    E, G, prior = _setup()
    cfg = MALAConfig(chain_length=4, burn_in=2)
    with pytest.raises(ConfigurationError):
        compare_chains(E, G, prior, cfg, cfg, make_generator(0), centers=torch.zeros(1, 2))


class TestSignTest:
    def test_all_wins(self):
        result = sign_test([1.0] * 10, [0.0] * 10)
        assert result.wins == 10 and result.losses == 0
        assert result.p_value == pytest.approx(0.5 ** 10)

    def test_ties_dropped(self):
        result = sign_test([0.5, 0.5, 1.0], [0.5, 0.5, 0.0])
        assert result.ties == 2
        assert result.p_value == pytest.approx(0.5)

    def test_only_ties(self):
        assert sign_test([0.3, 0.3], [0.3, 0.3]).p_value == 1.0


def test_report_file(tmp_path):
    E, G, prior = _setup()
    cfg = MALAConfig(step_size=0.05, chain_length=6, burn_in=3)
    latent, visible, _, _ = compare_chains(E, G, prior, cfg, cfg, make_generator(1), count=8,
                                           centers=torch.zeros(1, 2), sigma=1.0)
    path = write_comparison(tmp_path, latent, visible, extra={'checkpoint': 'c.meg'})
    assert path.name == COMPARISON_REPORT
    payload = json.loads(path.read_text())
    assert payload['latent']['space'] == 'latent' and payload['visible']['space'] == 'visible'
    assert payload['sign_test']['ties'] == 8
    assert payload['checkpoint'] == 'c.meg'
