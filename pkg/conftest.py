#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Shared pytest fixtures: frozen golden values, tiny configurations and
environment-provided data paths.
"""

import copy
import json
import os
from pathlib import Path

import pytest
import torch

from config_parser import DEFAULT_CONFIG

GOLDEN_PATH = Path(__file__).resolve().parent / 'testdata' / 'golden.json'


class GoldenValues:
    """Frozen regression values keyed by name, read from testdata/golden.json."""

    def __init__(self, path=GOLDEN_PATH):
        self.path = path
        self.values = json.loads(path.read_text())

    def check(self, key, values, rtol=1e-5, atol=1e-6):
        values = [float(v) for v in torch.as_tensor(values).detach().double().flatten()]
        if key not in self.values:
            pytest.fail(f"No golden value '{key}' in {self.path}")
        expected = torch.tensor(self.values[key], dtype=torch.float64)
        assert torch.allclose(torch.tensor(values, dtype=torch.float64), expected, rtol=rtol, atol=atol)


@pytest.fixture
def golden():
    return GoldenValues()


@pytest.fixture
def tiny_config(tmp_path):
    """Default configuration shrunk to run in seconds on 2D data."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    config['run'].update({'output_root': str(tmp_path / 'runs'), 'checkpoint_interval': 2, 'log_interval': 1})
    config['model'].update({
        'data_shape': [2],
        'latent_dim': 2,
        'energy': {'type': 'mlp', 'hidden': [16, 16], 'activation': 'swish'},
        'generator': {'type': 'mlp', 'hidden': [16, 16], 'activation': 'relu', 'output_activation': 'none'},
        'statistics': {'type': 'mlp', 'hidden': [16], 'activation': 'leaky_relu'},
    })
    config['training'].update({'batch_size': 16, 'total_iters': 5, 'energy_steps': 2})
    config['data'].update({'family': '8gaussians', 'train_count': 256})
    config['sampler'].update({'chain_length': 6, 'burn_in': 3, 'count': 8})
    config['density'].update({'resolution': [40, 40]})
    config['modes'].update({'sample_count': 200, 'batch_size': 100})
    config['comparison'].update({'chain_count': 8})
    return config


@pytest.fixture
def mnist_path():
    path = os.environ.get('MEG_MNIST_PATH')
    if not path:
        pytest.skip("MEG_MNIST_PATH not set")
    return path


@pytest.fixture
def kdd99_path():
    path = os.environ.get('MEG_KDD99_PATH')
    if not path:
        pytest.skip("MEG_KDD99_PATH not set")
    return path
