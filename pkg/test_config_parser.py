#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for configuration loading, presets and overrides.
"""

import copy

import pytest

from config_parser import DEFAULT_CONFIG, OUTPUT_ROOT_ENV, apply_overrides, load_config, parse_override
from errors import ConfigurationError, MissingArtifactError


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text("run:\n  seed: 7\ntraining:\n  batch_size: 32\n")
    return path


def test_file_values_override_defaults(config_file):
    config = load_config(str(config_file))
    assert config['run']['seed'] == 7
    assert config['training']['batch_size'] == 32
    assert config['training']['learning_rate'] == DEFAULT_CONFIG['training']['learning_rate']


def test_unknown_key_is_rejected(tmp_path):
    path = tmp_path / 'bad.yaml'
    path.write_text("training:\n  batchsize: 32\n")
    with pytest.raises(ConfigurationError, match="training.batchsize"):
        load_config(str(path))


def test_scalar_for_section_is_rejected(tmp_path):
    path = tmp_path / 'bad.yaml'
    path.write_text("sampler: 3\n")
    with pytest.raises(ConfigurationError):
        load_config(str(path))


def test_malformed_yaml(tmp_path):
    path = tmp_path / 'broken.yaml'
    path.write_text("run: [unclosed\n")
    with pytest.raises(ConfigurationError):
        load_config(str(path))


def test_missing_file(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_config(str(tmp_path / 'nope.yaml'))


@pytest.mark.parametrize('item, path, value', [
    ('training.batch_size=128', ['training', 'batch_size'], 128),
    ('training.learning_rate=2e-4', ['training', 'learning_rate'], 2e-4),
    ('sampler.include_prior=true', ['sampler', 'include_prior'], True),
    ('density.bounds=[-5, 5, -5, 5]', ['density', 'bounds'], [-5, 5, -5, 5]),
    ('run.name=toy run', ['run', 'name'], 'toy run'),
    ('data.mnist_path=', ['data', 'mnist_path'], None),
])
def test_override_parsing(item, path, value):
    assert parse_override(item) == (path, value)


def test_override_without_equals():
    with pytest.raises(ConfigurationError):
        parse_override('training.batch_size')


def test_overrides_applied_last(config_file):
    config = load_config(str(config_file), overrides=['run.seed=11', 'model.latent_dim=8'])
    assert config['run']['seed'] == 11
    assert config['model']['latent_dim'] == 8


def test_unknown_override_key(config_file):
    with pytest.raises(ConfigurationError):
        load_config(str(config_file), overrides=['sampler.steps=3'])


def test_preset(config_file):
    config = load_config(str(config_file), preset='toy-2d-25gaussians')
    assert config['data']['family'] == '25gaussians'
    assert config['density']['bounds'] == [-5, 5, -5, 5]


def test_unknown_preset(config_file):
    with pytest.raises(MissingArtifactError):
        load_config(str(config_file), preset='does-not-exist')


def test_output_root_from_environment(config_file, monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / 'elsewhere'))
    assert load_config(str(config_file))['run']['output_root'] == str(tmp_path / 'elsewhere')


def test_network_spec_with_type_is_replaced():
    config = apply_overrides(copy.deepcopy(DEFAULT_CONFIG), ['model.energy={type: conv, channels: [32, 64]}'])
    assert config['model']['energy'] == {'type': 'conv', 'channels': [32, 64]}


def test_network_spec_accepts_free_keys():
    config = apply_overrides(copy.deepcopy(DEFAULT_CONFIG), ['model.generator.dropout=0.1'])
    assert config['model']['generator']['dropout'] == 0.1
    assert config['model']['generator']['type'] == 'mlp'


def test_exponent_floats_in_files_and_overrides(tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text("training:\n  adam_epsilon: 1e-7\n")
    config = load_config(str(path), overrides=['training.learning_rate=2e-4', 'training.penalty_coeff=-1E+1'])
    assert config['training']['adam_epsilon'] == 1e-7
    assert config['training']['learning_rate'] == 2e-4
    assert config['training']['penalty_coeff'] == -10.0
