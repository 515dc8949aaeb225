#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for the objectives module.
"""

import math

import pytest
import torch

from errors import ConfigurationError, ScopeError
from networks import (ConstantEnergy, ConstantStatistics, IdentityGenerator, MLPEnergy, QuadraticEnergy,
                      initialize_parameters)
from objectives import (energy_loss, generator_loss, gradient_penalty, logistic_entropy_loss,
                        mi_jsd, score_matching_diag, shuffle_marginals, softplus, statistics_loss)
from random_streams import make_generator

LN2 = math.log(2.0)


class TestShuffle:
    def test_single_column_is_permutation(self):
        z = torch.tensor([[1.0], [2.0], [3.0]])
        shuffled = shuffle_marginals(z, make_generator(0)).values
        assert sorted(shuffled.flatten().tolist()) == [1.0, 2.0, 3.0]

    def test_each_column_keeps_its_multiset(self):
        z = torch.randn(50, 4, generator=make_generator(1))
        shuffled = shuffle_marginals(z, make_generator(2)).values
        for j in range(4):
            assert torch.equal(shuffled[:, j].sort().values, z[:, j].sort().values)

    def test_columns_permuted_independently(self):
        z = torch.arange(100.0).unsqueeze(1).repeat(1, 2)
        shuffled = shuffle_marginals(z, make_generator(3)).values
        assert not torch.equal(shuffled[:, 0], shuffled[:, 1])

    def test_single_row_rejected(self):
        with pytest.raises(ConfigurationError):
            shuffle_marginals(torch.zeros(1, 2), make_generator(0))


class TestMutualInformation:
    def _pairs(self):
        g = make_generator(0)
        x, z = torch.randn(6, 2, generator=g), torch.randn(6, 2, generator=g)
        return x, z, shuffle_marginals(z, g)

    def test_zero_statistics(self):
        x, z, zm = self._pairs()
        assert mi_jsd(ConstantStatistics((2,), 2, 0.0), x, z, zm).item() == pytest.approx(-2 * LN2, abs=1e-6)

    def test_unit_statistics(self):
        x, z, zm = self._pairs()
        expected = -(math.log1p(math.exp(-1.0)) + math.log1p(math.exp(1.0)))
        assert mi_jsd(ConstantStatistics((2,), 2, 1.0), x, z, zm).item() == pytest.approx(expected, abs=1e-6)
        assert expected == pytest.approx(-1.6265, abs=1e-4)

    def test_saturated_statistics_approach_zero(self):
        class Separating(torch.nn.Module):
            data_shape = (1,)
            latent_dim = 1

            def forward(self, x, z):
                return torch.where(z.squeeze(1) > 0, torch.tensor(60.0), torch.tensor(-60.0))

        x = torch.zeros(2, 1)
        joint = torch.tensor([[1.0], [1.0]])
        marg = torch.tensor([[-1.0], [-1.0]])
        value = mi_jsd(Separating(), x, joint, marg).item()
        assert -1e-20 < value <= 0.0

    def test_softplus_is_overflow_safe(self):
        a = torch.tensor([-1000.0, 0.0, 1000.0])
        out = softplus(a)
        assert torch.isfinite(out).all()
        assert out[1].item() == pytest.approx(LN2)
        assert out[2].item() == pytest.approx(1000.0)

    def test_logistic_form_with_zero_statistics(self):
        x, z, zm = self._pairs()
        assert logistic_entropy_loss(ConstantStatistics((2,), 2), x, z, zm).item() == pytest.approx(0.0, abs=1e-6)


class TestPenaltyAndEnergyLoss:
    def test_constant_energy_penalty(self):
        assert gradient_penalty(ConstantEnergy((2,)), torch.randn(4, 2)).item() == 0.0

    def test_quadratic_penalty(self):
        x = torch.tensor([[1.0, 0.0], [0.0, 2.0]])
        assert gradient_penalty(QuadraticEnergy(2), x).item() == pytest.approx(2.5)

    def test_symmetric_batches_cancel(self):
        E = initialize_parameters(MLPEnergy((2,), (8,)), make_generator(0))
        x = torch.randn(5, 2, generator=make_generator(1))
        loss, _ = energy_loss(E, x, x.clone(), 0.0)
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_quadratic_without_penalty(self):
        loss, breakdown = energy_loss(QuadraticEnergy(2), torch.zeros(1, 2), torch.ones(1, 2), 0.0)
        assert loss.item() == pytest.approx(-1.0)
        assert breakdown.energy_real == pytest.approx(0.0)
        assert breakdown.energy_fake == pytest.approx(1.0)

    def test_quadratic_with_penalty(self):
        loss, breakdown = energy_loss(QuadraticEnergy(2), torch.tensor([[1.0, 0.0]]), torch.zeros(1, 2), 0.1)
        assert loss.item() == pytest.approx(0.6)
        assert breakdown.penalty == pytest.approx(1.0)

    def test_batch_mismatch(self):
        with pytest.raises(ConfigurationError, match="Batch-size mismatch"):
            energy_loss(QuadraticEnergy(2), torch.zeros(2, 2), torch.zeros(3, 2), 0.1)

    def test_negative_penalty_rejected(self):
        with pytest.raises(ConfigurationError):
            energy_loss(QuadraticEnergy(2), torch.zeros(2, 2), torch.zeros(2, 2), -1.0)

    def test_penalty_reaches_energy_parameters(self):
        E = initialize_parameters(MLPEnergy((2,), (8,)), make_generator(0))
        x = torch.randn(4, 2, generator=make_generator(1))
        grads = torch.autograd.grad(gradient_penalty(E, x), list(E.parameters()), allow_unused=True)
        assert any(g is not None and g.abs().sum() > 0 for g in grads)


class TestGeneratorAndStatisticsLoss:
    def test_trivial_generator_loss(self):
        z = torch.zeros(3, 2)
        zm = shuffle_marginals(z, make_generator(0))
        loss, breakdown = generator_loss(ConstantEnergy((2,)), ConstantStatistics((2,), 2), IdentityGenerator(2), z, zm)
        assert loss.item() == pytest.approx(2 * LN2, abs=1e-6)
        assert breakdown.mi_estimate == pytest.approx(-2 * LN2, abs=1e-6)

    def test_quadratic_generator_loss(self):
        z = torch.zeros(2, 2)
        zm = shuffle_marginals(z, make_generator(0))
        loss, _ = generator_loss(QuadraticEnergy(2), ConstantStatistics((2,), 2), IdentityGenerator(2), z, zm)
        assert loss.item() == pytest.approx(2 * LN2, abs=1e-6)

    def test_statistics_loss_is_negated_estimate(self):
        z = torch.randn(4, 2, generator=make_generator(0))
        zm = shuffle_marginals(z, make_generator(1))
        assert statistics_loss(ConstantStatistics((2,), 2), z, z, zm).item() == pytest.approx(2 * LN2, abs=1e-6)

    def test_unknown_variant(self):
        z = torch.randn(4, 2, generator=make_generator(0))
        zm = shuffle_marginals(z, make_generator(1))
        with pytest.raises(ConfigurationError, match="mi_variant"):
            statistics_loss(ConstantStatistics((2,), 2), z, z, zm, variant='nce')


class TestScoreMatching:
    def test_quadratic_at_origin(self):
        assert score_matching_diag(QuadraticEnergy(2), torch.zeros(1, 2)) == pytest.approx(-2.0, abs=1e-5)

    def test_quadratic_elsewhere(self):
        x = torch.tensor([[1.0, 2.0]])
        assert score_matching_diag(QuadraticEnergy(2), x) == pytest.approx(0.5 * 5.0 - 2.0, abs=1e-5)

    def test_constant_energy(self):
        assert score_matching_diag(ConstantEnergy((2,)), torch.randn(3, 2)) == pytest.approx(0.0, abs=1e-9)

    def test_refused_in_high_dimension(self):
        with pytest.raises(ScopeError):
            score_matching_diag(QuadraticEnergy(17), torch.zeros(1, 17))
