#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for dataset construction and ingestion.
"""

import json

import numpy as np
import pandas as pd
import pytest
import torch

from datasets import (KDD99_COLUMNS, StackedMNISTSpec, Synthetic2DSpec, array_sha256, build_dataset,
                      build_stacked_mnist, load_kdd99, load_stacked_mnist, min_max_normalize, mnist_heldout_digit,
                      one_hot_encode, synthetic2d)
from errors import ConfigurationError, IngestionError, IntegrityError
from random_streams import make_generator


def _kdd_row(i, label):
    values = [str(i % 7), ('tcp', 'udp', 'icmp')[i % 3], ('http', 'smtp')[i % 2], 'SF']
    values += [str((i * j) % 11) for j in range(37)]
    return ','.join(values + [label])


def _write_kdd(path, n=40, malformed=0):
    rows = [_kdd_row(i, 'normal.' if i % 5 == 0 else 'smurf.') for i in range(n)]
    rows += ['1,tcp,http'] * malformed
    path.write_text('\n'.join(rows) + '\n')
    return path


class TestSynthetic:
    def test_25gaussians_components_balanced(self):
        spec = Synthetic2DSpec('25gaussians')
        _, components = synthetic2d(spec, 25_000, make_generator(0), return_components=True)
        counts = np.bincount(components.numpy(), minlength=25)
        assert np.all(np.abs(counts - 1000) <= 120)

    def test_zero_sigma_on_centers(self):
        spec = Synthetic2DSpec('8gaussians', sigma=0.0)
        samples, components = synthetic2d(spec, 100, make_generator(1), return_components=True)
        assert torch.allclose(samples, spec.centers[components])

    def test_8gaussians_centers_on_circle(self):
        centers = Synthetic2DSpec('8gaussians').centers
        assert torch.allclose(centers.norm(dim=1), torch.full((8,), 2.0))

    def test_same_seed_same_data(self):
        spec = Synthetic2DSpec('swissroll')
        a = synthetic2d(spec, 50, make_generator(3))
        b = synthetic2d(spec, 50, make_generator(3))
        assert a.shape == (50, 2) and torch.equal(a, b)

    def test_unknown_family(self):
        with pytest.raises(ConfigurationError):
            Synthetic2DSpec('moons')

    def test_sample_count_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            synthetic2d(Synthetic2DSpec('8gaussians'), 0, make_generator(0))


class TestStackedMNIST:
    def _labels(self):
        return np.arange(50) % 10

    def test_sizes_and_modes(self):
        spec = StackedMNISTSpec(3, train_count=200, eval_count=40)
        archive = build_stacked_mnist(spec, self._labels(), seed=1)
        assert archive.train_indices.shape == (200, 3)
        assert archive.eval_modes.shape == (40,)
        assert spec.mode_capacity == 1000
        labels = self._labels()
        expected = labels[archive.train_indices] @ np.array([100, 10, 1])
        assert np.array_equal(archive.train_modes, expected)

    def test_rebuild_is_reproducible(self):
        spec = StackedMNISTSpec(4, train_count=30, eval_count=0)
        a = build_stacked_mnist(spec, self._labels(), seed=5)
        b = build_stacked_mnist(spec, self._labels(), seed=5)
        assert a.content_hash() == b.content_hash()

    def test_persist_and_reload(self, tmp_path):
        spec = StackedMNISTSpec(3, train_count=20, eval_count=10)
        archive = build_stacked_mnist(spec, self._labels(), seed=2, archive_dir=tmp_path)
        loaded = load_stacked_mnist(tmp_path / 'stacked_mnist_3_seed2.npz')
        assert np.array_equal(loaded.train_modes, archive.train_modes)
        assert loaded.manifest['sha256'] == archive.manifest['sha256']

    def test_hash_mismatch(self, tmp_path):
        spec = StackedMNISTSpec(3, train_count=20, eval_count=10)
        build_stacked_mnist(spec, self._labels(), seed=2, archive_dir=tmp_path)
        manifest = tmp_path / 'stacked_mnist_3_seed2.json'
        stored = json.loads(manifest.read_text())
        stored['sha256'] = '0' * 64
        manifest.write_text(json.dumps(stored))
        with pytest.raises(IntegrityError):
            build_stacked_mnist(spec, self._labels(), seed=2, archive_dir=tmp_path)
        with pytest.raises(IntegrityError):
            load_stacked_mnist(tmp_path / 'stacked_mnist_3_seed2.npz')

    def test_no_source_images(self):
        with pytest.raises(IngestionError):
            build_stacked_mnist(StackedMNISTSpec(3, 10, 0), np.array([]), seed=0)

    def test_unsupported_stack_depth(self):
        with pytest.raises(ConfigurationError):
            StackedMNISTSpec(5)


def test_heldout_digit_split():
    mnist = {
        'x_train': np.zeros((20, 28, 28), dtype=np.uint8), 'y_train': np.arange(20) % 10,
        'x_test': np.full((10, 28, 28), 255, dtype=np.uint8), 'y_test': np.arange(10),
    }
    split = mnist_heldout_digit(mnist, 3)
    assert split.train_x.shape == (18, 1, 28, 28)
    assert split.test_labels.tolist() == [0, 0, 0, 1, 0, 0, 0, 0, 0, 0]
    assert split.test_x.max().item() == 1.0


class TestTabular:
    def test_one_hot(self):
        frame = pd.DataFrame({'proto': ['tcp', 'udp', 'icmp', 'tcp'], 'n': [1, 2, 3, 4]})
        encoded = one_hot_encode(frame, ['proto'])
        assert list(encoded.columns) == ['proto=icmp', 'proto=tcp', 'proto=udp', 'n']
        assert np.all(encoded[['proto=icmp', 'proto=tcp', 'proto=udp']].sum(axis=1) == 1)

    def test_min_max(self):
        values = np.array([[0.0, 5.0], [10.0, 5.0], [5.0, 5.0]])
        scaled, minimum, maximum = min_max_normalize(values)
        assert scaled[:, 0].tolist() == [0.0, 1.0, 0.5]
        assert np.all(scaled[:, 1] == 0.0)
        clipped, _, _ = min_max_normalize(np.array([[20.0, 5.0]]), minimum, maximum)
        assert clipped[0, 0] == 1.0

    def test_load_kdd99(self, tmp_path):
        table = load_kdd99(_write_kdd(tmp_path / 'kdd.csv'), seed=0)
        assert table.rows_read == 40 and table.malformed_rows == 0
        assert table.features.shape[0] == 40
        assert table.features.min() >= 0.0 and table.features.max() <= 1.0
        assert table.labels.sum() == 8
        assert len(table.train_index) == 20 and len(table.test_index) == 20
        assert 'protocol_type=udp' in table.schema

    def test_attack_convention_flips_labels(self, tmp_path):
        path = _write_kdd(tmp_path / 'kdd.csv')
        a = load_kdd99(path, 'normal_is_anomaly')
        b = load_kdd99(path, 'attack_is_anomaly')
        assert np.array_equal(a.labels, 1 - b.labels)

    def test_too_many_malformed_rows(self, tmp_path):
        with pytest.raises(IngestionError, match="malformed"):
            load_kdd99(_write_kdd(tmp_path / 'kdd.csv', malformed=1))

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            load_kdd99(tmp_path / 'absent.csv')

    @pytest.mark.extended
    def test_real_file(self, kdd99_path):
        table = load_kdd99(kdd99_path)
        assert table.rows_read == 494_021
        assert len(KDD99_COLUMNS) == 42
        assert table.labels.mean() == pytest.approx(0.197, abs=0.01)


def test_build_synthetic_bundle(tiny_config):
    bundle = build_dataset(tiny_config)
    assert bundle.data_shape == (2,)
    assert len(bundle.train) == tiny_config['data']['train_count']
    assert bundle.synthetic_spec.family == '8gaussians'
    assert bundle.sha256 == array_sha256(bundle.train.values)
    assert build_dataset(tiny_config).sha256 == bundle.sha256
    tiny_config['run']['seed'] += 1
    assert build_dataset(tiny_config).sha256 != bundle.sha256


def test_array_hash_sees_shape_and_dtype():
    values = np.arange(6, dtype=np.float32)
    assert array_sha256(values) != array_sha256(values.reshape(2, 3))
    assert array_sha256(values) != array_sha256(values.astype(np.float64))
    assert array_sha256(values, values) != array_sha256(values)


def test_unknown_kind(tiny_config):
    tiny_config['data']['kind'] = 'cifar'
    with pytest.raises(ConfigurationError):
        build_dataset(tiny_config)


def test_build_kdd99_bundle_records_hash(tiny_config, tmp_path):
    tiny_config['data'].update({'kind': 'kdd99', 'kdd99_path': str(_write_kdd(tmp_path / 'kdd.csv'))})
    bundle = build_dataset(tiny_config)
    assert len(bundle.test_labels) == 20
    assert bundle.sha256 == build_dataset(tiny_config).sha256
    assert len(bundle.sha256) == 64
