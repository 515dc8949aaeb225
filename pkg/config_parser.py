#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Configuration Module

This module handles loading and parsing of configuration settings.

Precedence, lowest to highest: built-in defaults, config/config.yaml (or the
file given with -c), the preset named with --preset, the MEG_OUTPUT_ROOT
environment variable (run.output_root only) and --set key=value overrides.
Every key must already exist in DEFAULT_CONFIG.
"""

import copy
import os
import re

import yaml

from errors import ConfigurationError, MissingArtifactError

OUTPUT_ROOT_ENV = 'MEG_OUTPUT_ROOT'
PRESET_DIR = os.path.join('config', 'presets')

# Free-form network specs: keys depend on the network type
OPEN_SECTIONS = {'model.energy', 'model.generator', 'model.statistics'}


class ConfigLoader(yaml.SafeLoader):
    """SafeLoader that also reads exponent-only floats such as 2e-4."""


ConfigLoader.add_implicit_resolver(
    'tag:yaml.org,2002:float',
    re.compile(r'^[-+]?[0-9][0-9_]*(?:\.[0-9_]*)?[eE][-+]?[0-9]+$'),
    list('-+0123456789'))


# Default configuration values
DEFAULT_CONFIG = {
    'run': {
        'name': 'meg',
        'seed': 0,
        'output_root': 'runs',
        'checkpoint_interval': 1000,
        'log_interval': 100,
        'eval_interval': 0,
        'device': 'cpu',
    },
    'model': {
        'data_shape': None,  # inferred from the dataset when null
        'latent_dim': 2,
        'energy': {'type': 'mlp', 'hidden': [512, 512, 512], 'activation': 'swish'},
        'generator': {'type': 'mlp', 'hidden': [512, 512, 512], 'activation': 'relu', 'output_activation': 'none'},
        'statistics': {'type': 'mlp', 'hidden': [512, 512], 'activation': 'leaky_relu'},
    },
    'training': {
        'learning_rate': 1e-4,
        'adam_beta1': 0.5,
        'adam_beta2': 0.9,
        'adam_epsilon': 1e-8,
        'penalty_coeff': 0.1,
        'energy_steps': 5,
        'batch_size': 64,
        'total_iters': 1000,
        'mi_variant': 'softplus',
        'energy_lr': None,
        'generator_lr': None,
        'statistics_lr': None,
    },
    'data': {
        'kind': 'synthetic2d',
        'family': '25gaussians',
        'sigma': None,
        'scale': None,
        'noise': None,
        'train_count': 100000,
        'eval_count': 0,
        'stacks': 3,
        'mnist_path': None,
        'kdd99_path': None,
        'archive_dir': 'data',
        'contamination_convention': 'normal_is_anomaly',
        'test_fraction': 0.5,
        'train_on_normal_only': True,
        'heldout_digit': 1,
    },
    'sampler': {
        'step_size': 0.01,
        'chain_length': 200,
        'burn_in': 100,
        'space': 'latent',
        'include_prior': False,
        'count': 64,
    },
    'density': {
        'bounds': [-4.0, 4.0, -4.0, 4.0],
        'resolution': [300, 300],
        'estimator': 'riemann',
        'proposal_count': 100000,
        'fit_count': 5000,
        'local_maxima_window': 5,
    },
    'modes': {
        'sample_count': 10000,
        'batch_size': 1000,
        'cutoff': 3.0,
        'classifier_path': None,
        'require_accuracy': True,
        'use_mcmc': False,
    },
    'anomaly': {
        'contamination': 0.2,
        'batch_size': 4096,
        'rolling_window': 10,
    },
    'comparison': {
        'chain_count': 64,
        'visible_step_size': None,
    },
    'svg': {
        'width': 400,
        'height': 400,
        'padding': 0.05,
    },
}


def merge_config(base, update, prefix=''):
    """
    Recursively merge `update` into `base` in place.

    Raises:
        ConfigurationError: If `update` holds a key that `base` does not know
    """
    for key, value in (update or {}).items():
        dotted = f"{prefix}{key}"
        if prefix.rstrip('.') in OPEN_SECTIONS:
            base[key] = copy.deepcopy(value)
            continue
        if key not in base:
            raise ConfigurationError(f"Unknown configuration key: {dotted}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"Configuration key {dotted} must be a section, got {value!r}")
            # a network spec naming its type replaces the default spec wholesale
            if dotted in OPEN_SECTIONS and 'type' in value:
                base[key] = copy.deepcopy(value)
            else:
                merge_config(base[key], value, prefix=f"{dotted}.")
        else:
            base[key] = value
    return base


def _read_yaml(path):
    try:
        with open(path, 'r') as f:
            data = yaml.load(f, Loader=ConfigLoader)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Failed to parse config {path}: {e}")
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError(f"Config {path} must hold a mapping at the top level")
    return data or {}


def find_default_config():
    """config/config.yaml in the working directory or next to this module, or None."""
    locations = [
        os.path.join(os.getcwd(), 'config', 'config.yaml'),
        os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config', 'config.yaml'),
    ]
    for loc in locations:
        if os.path.exists(loc):
            return loc
    return None


def preset_path(name):
    """Path of a shipped preset, by name (config/presets/NAME.yaml)."""
    for root in (os.getcwd(), os.path.dirname(os.path.abspath(__file__))):
        path = os.path.join(root, PRESET_DIR, f"{name}.yaml")
        if os.path.exists(path):
            return path
    raise MissingArtifactError(f"Preset '{name}'", os.path.join(PRESET_DIR, f"{name}.yaml"))


def parse_override(item):
    """'a.b.c=value' -> (['a', 'b', 'c'], parsed value)."""
    if '=' not in item:
        raise ConfigurationError(f"Override must look like key=value, got '{item}'")
    key, raw = item.split('=', 1)
    try:
        value = yaml.load(raw, Loader=ConfigLoader) if raw.strip() else None
    except yaml.YAMLError:
        value = raw
    return key.strip().split('.'), value


def apply_overrides(config, overrides):
    """
    Apply command-line overrides to a configuration in place.

    Args:
        config (dict): Configuration to update
        overrides (iterable): Items of the form 'section.key=value'

    Returns:
        dict: The updated configuration
    """
    for item in overrides or ():
        path, value = parse_override(item)
        update = value
        for part in reversed(path):
            update = {part: update}
        merge_config(config, update)
    return config


def load_config(config_path=None, preset=None, overrides=None):
    """
    Load configuration from YAML with fallback to default values.

    Args:
        config_path (str, optional): Path to configuration YAML file. If None,
                                     will try to load from default location.
        preset (str, optional): Name of a shipped preset applied on top
        overrides (list, optional): 'key=value' items applied last

    Returns:
        dict: Configuration dictionary

    Raises:
        MissingArtifactError: If an explicit config file does not exist
        ConfigurationError: On unknown keys or malformed YAML
    """
    if config_path is not None and not os.path.exists(config_path):
        raise MissingArtifactError('Config file', config_path)
    if config_path is None:
        config_path = find_default_config()

    config = copy.deepcopy(DEFAULT_CONFIG)
    if config_path:
        merge_config(config, _read_yaml(config_path))
    if preset:
        merge_config(config, _read_yaml(preset_path(preset)))
    if os.environ.get(OUTPUT_ROOT_ENV):
        config['run']['output_root'] = os.environ[OUTPUT_ROOT_ENV]
    apply_overrides(config, overrides)
    return config
