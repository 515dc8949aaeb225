#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
End-to-end tests of the command-line interface on a tiny 2D model.
"""

import json
from pathlib import Path

import pytest
import yaml

from checkpoint import checkpoint_path
from main import EXIT_OK, EXIT_USAGE, EXIT_VERIFICATION, main
from run_manifest import FAILED_MARKER, read_manifest
from trainer import CHECKPOINT_DIR, METRICS_FILE
from verification import SUITE_FUNCTIONS, SUITES


@pytest.fixture
def config_path(tiny_config, tmp_path):
    path = tmp_path / 'tiny.yaml'
    path.write_text(yaml.safe_dump(tiny_config))
    return path


@pytest.fixture
def trained(config_path, tiny_config):
    assert main(['train', '-c', str(config_path)]) == EXIT_OK
    run_dir, = (p for p in _runs(tiny_config) if p.name.startswith('train-'))
    return run_dir, checkpoint_path(run_dir / CHECKPOINT_DIR, tiny_config['training']['total_iters'])


def _runs(config):
    root = config['run']['output_root']
    return sorted((Path(root) / config['run']['name']).iterdir())


def _latest(config, command):
    return [p for p in _runs(config) if p.name.startswith(f'{command}-')][-1]


def test_train_writes_manifest_metrics_and_checkpoint(trained):
    run_dir, ckpt = trained
    assert ckpt.exists()
    assert (run_dir / METRICS_FILE).exists()
    assert (run_dir / 'run.log').exists()
    manifest = read_manifest(run_dir)
    assert manifest['status'] == 'completed'
    assert manifest['summary']['iterations'] == 5
    assert len(manifest['summary']['dataset_sha256']) == 64
    assert any(a['path'].endswith('checkpoint_00000005.meg') for a in manifest['artifacts'])


def test_resume_from_run_directory(trained, tiny_config):
    run_dir, _ = trained
    assert main(['train', '--resume', str(run_dir), '--set', 'training.total_iters=6']) == EXIT_OK
    assert checkpoint_path(run_dir / CHECKPOINT_DIR, 6).exists()


def test_sample(trained, tiny_config, capsys):
    _, ckpt = trained
    assert main(['sample', '--checkpoint', str(ckpt), '--count', '4']) == EXIT_OK
    assert 'acceptance rate:' in capsys.readouterr().out
    run_dir = _latest(tiny_config, 'sample')
    summary = json.loads((run_dir / 'sampling_summary.json').read_text())
    assert summary['chains'] == 4 and 0.0 <= summary['acceptance_rate'] <= 1.0
    assert (run_dir / 'samples.npz').exists() and (run_dir / 'chain.svg').exists()


def test_sample_compare(trained, tiny_config):
    _, ckpt = trained
    assert main(['sample', '--checkpoint', str(ckpt), '--compare']) == EXIT_OK
    report = json.loads((_latest(tiny_config, 'sample') / 'comparison_report.json').read_text())
    assert report['latent']['chain_count'] == tiny_config['comparison']['chain_count']
    assert 'sign_test' in report


def test_eval_density(trained, tiny_config):
    _, ckpt = trained
    assert main(['eval-density', '--checkpoint', str(ckpt)]) == EXIT_OK
    report = json.loads((_latest(tiny_config, 'eval-density') / 'density_report.json').read_text())
    assert report['mass'] == pytest.approx(1.0)
    assert 1 <= len(report['local_maxima']) <= 8
    assert report['mode_count'] == 8
    assert 'score_matching' in report


def test_eval_modes(trained, tiny_config):
    _, ckpt = trained
    assert main(['eval-modes', '--checkpoint', str(ckpt)]) == EXIT_OK
    report = json.loads((_latest(tiny_config, 'eval-modes') / 'modes_report.json').read_text())
    assert report['sample_count'] == 200 and report['mode_capacity'] == 8


def test_eval_anomaly_without_labels_fails(trained, tiny_config):
    _, ckpt = trained
    assert main(['eval-anomaly', '--checkpoint', str(ckpt)]) == EXIT_USAGE
    assert (_latest(tiny_config, 'eval-anomaly') / FAILED_MARKER).exists()


@pytest.mark.parametrize('how', ['override', 'config'])
def test_latent_dim_mismatch(trained, tiny_config, config_path, how):
    _, ckpt = trained
    if how == 'override':
        argv = ['sample', '--checkpoint', str(ckpt), '--set', 'model.latent_dim=3']
    else:
        tiny_config['model']['latent_dim'] = 3
        config_path.write_text(yaml.safe_dump(tiny_config))
        argv = ['sample', '--checkpoint', str(ckpt), '-c', str(config_path)]
    assert main(argv) == EXIT_USAGE


def test_missing_checkpoint(tmp_path):
    assert main(['sample', '--checkpoint', str(tmp_path / 'absent.meg')]) == EXIT_USAGE


def test_bad_arguments():
    with pytest.raises(SystemExit) as info:
        main(['sample', '--step-size', 'fast', '--checkpoint', 'x'])
    assert info.value.code == EXIT_USAGE


def test_check_records_results_in_run_directory(config_path, tiny_config):
    assert main(['check', '-c', str(config_path), '--suite', 'partition']) == EXIT_OK
    run_dir = _latest(tiny_config, 'check')
    assert read_manifest(run_dir)['status'] == 'completed'
    checks = json.loads((run_dir / 'checks.json').read_text())
    assert checks['suites'] == ['partition'] and all(r['passed'] for r in checks['results'])


@pytest.mark.slow
def test_check_default_suites_pass_on_fresh_models(config_path, tiny_config):
    assert main(['check', '-c', str(config_path)]) == EXIT_OK
    checks = json.loads((_latest(tiny_config, 'check') / 'checks.json').read_text())
    assert checks['suites'] == list(SUITES)


def test_failed_check_exits_with_verification_status(config_path, tiny_config, monkeypatch):
    monkeypatch.setitem(SUITE_FUNCTIONS, 'partition', lambda recorder: recorder.record('forced', False))
    assert main(['check', '-c', str(config_path), '--suite', 'partition']) == EXIT_VERIFICATION
    run_dir = _latest(tiny_config, 'check')
    assert (run_dir / FAILED_MARKER).read_text().startswith('VerificationFailure')
    assert read_manifest(run_dir)['status'] == 'failed'
