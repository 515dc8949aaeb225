#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Main Entry Point for MEG

This module serves as the command-line entry point: training, sampling, every
evaluation and the self-checks run inside a fresh run directory with a manifest.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or numeric
fault, 3 verification failure.
"""

import sys
import json
import argparse
import logging
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from anomaly import RollingAnomalyEvaluation, anomaly_report, score_samples
from chain_comparison import compare_chains, write_comparison
from checkpoint import latest_checkpoint, load_checkpoint
from config_parser import load_config, apply_overrides
from datasets import Synthetic2DSpec, build_dataset, load_mnist, synthetic2d
from density_eval import GridSpec, density_grid, export_density, grid_local_maxima
from errors import ConfigurationError, MissingArtifactError, ProtocolError, VerificationFailure
from figures import plot_image_grid
from mode_eval import (ModeHistogram, NearestCenterClassifier, StackedDigitClassifier, classifier_accuracy,
                       generator_histogram, load_digit_classifier, mode_histogram, mode_report, require_accuracy,
                       save_digit_classifier, train_digit_classifier, uniform_reference)
from networks import generate, sample_prior
from objectives import score_matching_diag
from random_streams import run_streams
from run_manifest import RunManifest, create_run_dir, file_sha256
from sampler import MALAConfig, run_mala, run_visible_mala
from svg_generator import create_chain_svg
from trainer import CHECKPOINT_DIR, load_models, run_training
from verification import SUITES, run_checks

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_VERIFICATION = 3

SCORE_MATCHING_SAMPLES = 1000

logger = logging.getLogger(__name__)


def setup_logging(verbose=False):
    """Set up logging configuration"""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    return logging.getLogger(__name__)


def attach_run_log(run_dir):
    """Mirror all log records into <run_dir>/run.log."""
    handler = logging.FileHandler(Path(run_dir) / 'run.log')
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = UsageParser(description="Energy-based model with an amortized maximum-entropy generator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="Path to config file (default: config/config.yaml)")
    common.add_argument("--preset", help="Name of a shipped preset in config/presets/")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config value, e.g. --set training.batch_size=128 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="Enable verbose output")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=UsageParser)

    train = sub.add_parser("train", parents=[common], help="Train a model")
    train.add_argument("--resume", help="Checkpoint (or run directory) to resume from; continues in that run directory")

    for name, text in (("sample", "Sample with MALA from a trained model"),
                       ("eval-density", "Normalized 2D density grid"),
                       ("eval-modes", "Mode coverage and empirical KL"),
                       ("eval-anomaly", "Score-norm anomaly detection")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", required=True, help="Path to a trained checkpoint")

    sample = sub.choices["sample"]
    sample.add_argument("--chain-length", type=int, help="Steps per chain")
    sample.add_argument("--burn-in", type=int, help="Leading steps to discard")
    sample.add_argument("--step-size", type=float, help="Langevin step size")
    sample.add_argument("--space", choices=("latent", "visible"), help="Chain space")
    sample.add_argument("--count", type=int, help="Number of chains")
    sample.add_argument("--compare", action="store_true", help="Run latent and visible chains from matched starts")

    check = sub.add_parser("check", parents=[common], help="Run the verification suites")
    check.add_argument("--suite", action="append", choices=SUITES, help="Run only this suite (repeatable)")
    return parser


# ---------------------------------------------------------------------------
# Configuration per command
# ---------------------------------------------------------------------------

def resolve_config(args, ckpt=None):
    """
    Effective configuration of a command.

    Evaluation commands without -c/--preset start from the checkpoint's own
    configuration; command-line overrides always apply last.
    """
    if ckpt is not None and not args.config and not args.preset:
        config = apply_overrides(json.loads(json.dumps(ckpt.config)), args.overrides)
    else:
        config = load_config(args.config, args.preset, args.overrides)
    if ckpt is not None and config['model']['data_shape'] is None:
        config['model']['data_shape'] = ckpt.config['model']['data_shape']
    return config


def resolve_resume(path):
    """A checkpoint file, or the latest checkpoint of a run directory."""
    path = Path(path)
    if path.is_dir():
        found = latest_checkpoint(path / CHECKPOINT_DIR)
        if found is None:
            raise MissingArtifactError('Checkpoint', path / CHECKPOINT_DIR)
        return found
    if not path.exists():
        raise MissingArtifactError('Checkpoint', path)
    return path


def synthetic_spec(config):
    data = config['data']
    if data['kind'] != 'synthetic2d':
        return None
    return Synthetic2DSpec.from_config(data)


def _save_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, default=float))
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args, config, run_dir):
    bundle = build_dataset(config)
    if config['model']['data_shape'] is None:
        config['model']['data_shape'] = list(bundle.data_shape)
    hooks = []
    rolling = None
    if bundle.test_labels is not None and config['run']['eval_interval']:
        rolling = RollingAnomalyEvaluation(bundle.test_x, bundle.test_labels,
                                           config['anomaly']['contamination'], config['anomaly']['rolling_window'])
        hooks.append(rolling)
    final, metrics_path = run_training(config, bundle.train, run_dir, resume_from=args.resume, hooks=hooks)
    summary = {'iterations': int(final.iteration), 'metrics': str(metrics_path), 'dataset_sha256': bundle.sha256}
    if rolling is not None and rolling.history:
        summary['anomaly_rolling'] = rolling.summary()
        _save_json(Path(run_dir) / 'anomaly_rolling.json', {'history': list(rolling.history), **rolling.summary()})
    return summary


def cmd_sample(args, config, run_dir, ckpt):
    models = load_models(ckpt, config)
    cfg = MALAConfig.from_config(config['sampler'], step_size=args.step_size, chain_length=args.chain_length,
                                 burn_in=args.burn_in, space=args.space)
    count = args.count or int(config['sampler']['count'])
    generator = run_streams(config['run']['seed'])['sample']
    spec = synthetic_spec(config)
    is_2d = tuple(models.energy.data_shape) == (2,)
    bounds = tuple(config['density']['bounds'])
    svg = config['svg']

    if args.compare:
        cfg_latent = replace(cfg, space='latent')
        visible_step = config['comparison']['visible_step_size'] or cfg.step_size
        cfg_visible = replace(cfg, space='visible', step_size=float(visible_step))
        centers = spec.centers if spec is not None else None
        latent_report, visible_report, latent, visible = compare_chains(
            models.energy, models.generator, models.prior, cfg_latent, cfg_visible, generator,
            count=args.count or int(config['comparison']['chain_count']),
            centers=centers, sigma=spec.sigma if centers is not None else None, cutoff=config['modes']['cutoff'])
        for name, result, report in (('latent', latent, latent_report), ('visible', visible, visible_report)):
            archive = Path(run_dir) / f"samples_{name}.npz"
            np.savez_compressed(archive, chain=result.chain.cpu().numpy(), samples=result.samples.cpu().numpy(),
                                start=result.start.cpu().numpy())
            report.archive = archive.name
            _render_chain(result, Path(run_dir) / f"chain_{name}", is_2d, bounds, centers, name, svg)
        path = write_comparison(run_dir, latent_report, visible_report)
        print(f"latent acceptance rate: {latent_report.acceptance_rate:.4f}, "
              f"visible acceptance rate: {visible_report.acceptance_rate:.4f}")
        return {'comparison': path.name}

    z0 = sample_prior(models.prior, count, generator)
    if cfg.space == 'latent':
        result = run_mala(z0, models.energy, models.generator, cfg, generator)
    else:
        with torch.no_grad():
            x0 = generate(models.generator, z0)
        result = run_visible_mala(x0, models.energy, cfg, generator)
    np.savez_compressed(Path(run_dir) / 'samples.npz', chain=result.chain.cpu().numpy(),
                        samples=result.samples.cpu().numpy(), start=result.start.cpu().numpy())
    summary = {
        'space': cfg.space,
        'step_size': cfg.step_size,
        'chain_length': cfg.chain_length,
        'burn_in': cfg.burn_in,
        'chains': count,
        'acceptance_rate': result.acceptance_rate,
    }
    _save_json(Path(run_dir) / 'sampling_summary.json', summary)
    _render_chain(result, Path(run_dir) / 'chain', is_2d, bounds, spec.centers if spec else None, cfg.space, svg)
    print(f"acceptance rate: {result.acceptance_rate:.4f} ({cfg.space}, {count} chains x {cfg.chain_length} steps)")
    return summary


def _render_chain(result, stem, is_2d, bounds, centers, label, svg):
    if is_2d:
        create_chain_svg(result.start.cpu().numpy(), result.final.cpu().numpy(), f"{stem}.svg", bounds,
                         centers=None if centers is None else centers.numpy(), label=label,
                         panel_width=svg['width'], panel_height=svg['height'], padding=svg['padding'])
    elif result.start.dim() == 4:
        plot_image_grid(result.start.cpu().numpy()[:50], f"{stem}_start.png", title=f"{label} start")
        plot_image_grid(result.final.cpu().numpy()[:50], f"{stem}_end.png", title=f"{label} end")


def cmd_eval_density(args, config, run_dir, ckpt):
    models = load_models(ckpt, config)
    density = config['density']
    spec = GridSpec.from_config(density)
    grid = density_grid(models.energy, spec, density['estimator'], G=models.generator, prior=models.prior,
                        generator=run_streams(config['run']['seed'])['eval'],
                        proposal_count=int(density['proposal_count']), fit_count=int(density['fit_count']))
    data_spec = synthetic_spec(config)
    centers = data_spec.centers.numpy() if data_spec is not None and data_spec.centers is not None else None
    export_density(grid, run_dir, title=config['run']['name'], centers=centers)

    report = {'log_partition': grid.log_partition, 'log_partition_importance': grid.log_partition_importance,
              'mass': grid.mass}
    if data_spec is not None:
        held_out = synthetic2d(data_spec, SCORE_MATCHING_SAMPLES, run_streams(config['run']['seed'])['eval'])
        report['score_matching'] = score_matching_diag(models.energy, held_out)
    if centers is not None:
        maxima = grid_local_maxima(grid, count=len(centers), window=int(density['local_maxima_window']))
        distances = np.linalg.norm(maxima[:, None, :] - centers[None, :, :], axis=2).min(axis=1)
        cutoff = config['modes']['cutoff'] * data_spec.sigma
        report.update({'local_maxima': maxima.tolist(), 'maxima_within_cutoff': int((distances <= cutoff).sum()),
                       'mode_count': len(centers)})
    _save_json(Path(run_dir) / 'density_report.json', report)
    return report


def _stacked_classifier(config, run_dir, stacks, generator):
    modes = config['modes']
    mnist = load_mnist(config['data']['mnist_path'])
    if modes['classifier_path']:
        net = load_digit_classifier(modes['classifier_path'])
        accuracy = classifier_accuracy(net, mnist['x_test'] / 255.0, mnist['y_test'])
    else:
        net, accuracy = train_digit_classifier(mnist, generator)
        save_digit_classifier(net, Path(run_dir) / 'digit_classifier.pt')
    require_accuracy(accuracy, strict=bool(modes['require_accuracy']))
    return StackedDigitClassifier(net, stacks), accuracy


def cmd_eval_modes(args, config, run_dir, ckpt):
    models = load_models(ckpt, config)
    modes = config['modes']
    streams = run_streams(config['run']['seed'])
    spec = synthetic_spec(config)
    extra = {}
    if spec is not None:
        if spec.centers is None:
            raise ConfigurationError(f"Mode evaluation needs mode centers; '{spec.family}' has none")
        classifier = NearestCenterClassifier(spec.centers, spec.sigma, modes['cutoff'])
    elif config['data']['kind'] == 'stacked_mnist':
        classifier, accuracy = _stacked_classifier(config, run_dir, int(config['data']['stacks']), streams['build'])
        extra['classifier_accuracy'] = accuracy
    else:
        raise ConfigurationError(f"Mode evaluation is not defined for data kind '{config['data']['kind']}'")

    count, batch = int(modes['sample_count']), int(modes['batch_size'])
    if modes['use_mcmc']:
        cfg = MALAConfig.from_config(config['sampler'], space='latent')
        histogram, in_mode = ModeHistogram.empty(classifier.mode_capacity), []
        remaining = count
        while remaining > 0:
            m = min(batch, remaining)
            final = run_mala(sample_prior(models.prior, m, streams['eval']), models.energy, models.generator,
                             cfg, streams['eval']).final
            histogram = histogram.merge(mode_histogram(classifier, final, classifier.mode_capacity))
            if spec is not None:
                in_mode.append(classifier.in_mode_fraction(final) * m)
            remaining -= m
        if spec is not None:
            extra['in_mode_fraction'] = float(sum(in_mode) / count)
    else:
        histogram = generator_histogram(models.generator, models.prior, classifier, count, streams['eval'], batch)
        if spec is not None:
            with torch.no_grad():
                samples = generate(models.generator, sample_prior(models.prior, count, streams['eval']))
            extra['in_mode_fraction'] = classifier.in_mode_fraction(samples)
    extra['sampling'] = 'mcmc' if modes['use_mcmc'] else 'generator'
    report = mode_report(histogram, uniform_reference(classifier.mode_capacity), extra)
    _save_json(Path(run_dir) / 'modes_report.json', report)
    return {k: v for k, v in report.items() if k != 'counts'}


def cmd_eval_anomaly(args, config, run_dir, ckpt):
    models = load_models(ckpt, config)
    bundle = build_dataset(config)
    if bundle.test_labels is None:
        raise ProtocolError(f"Data kind '{config['data']['kind']}' has no labelled test split")
    anomaly = config['anomaly']
    scores = score_samples(models.energy, bundle.test_x, bundle.test_labels, int(anomaly['batch_size']))
    report = anomaly_report(scores, float(anomaly['contamination']))
    report['checkpoint'] = str(args.checkpoint)
    report['checkpoint_sha256'] = file_sha256(args.checkpoint)
    report['dataset_sha256'] = bundle.sha256
    _save_json(Path(run_dir) / 'anomaly_report.json', report)
    return report


def cmd_check(args, config, run_dir):
    suites = args.suite or list(SUITES)
    recorder = run_checks(suites, verbose=args.verbose)
    results = [{'name': name, 'passed': ok, 'detail': detail} for name, ok, detail in recorder.results]
    _save_json(Path(run_dir) / 'checks.json', {'suites': suites, 'results': results})
    failed = [r['name'] for r in results if not r['passed']]
    if failed:
        raise VerificationFailure(f"{len(failed)}/{len(results)} checks failed: " + '; '.join(failed))
    return {'suites': suites, 'checks': len(results), 'passed': len(results)}


def exit_code_for(error):
    if isinstance(error, VerificationFailure):
        return EXIT_VERIFICATION
    if isinstance(error, (ConfigurationError, ProtocolError)):
        return EXIT_USAGE
    return EXIT_RUNTIME


def main(argv=None):
    """Main entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    logger = setup_logging(args.verbose)

    run_dir, manifest, handler = None, None, None
    try:
        resume = getattr(args, 'resume', None)
        if resume:
            args.resume = resolve_resume(resume)
            ckpt = load_checkpoint(args.resume)
        else:
            ckpt = load_checkpoint(args.checkpoint) if getattr(args, 'checkpoint', None) else None
        config = resolve_config(args, ckpt)
        if resume:
            run_dir = Path(args.resume).resolve().parent.parent
        else:
            run_dir = create_run_dir(config, args.command)
        handler = attach_run_log(run_dir)
        logger.info(f"Running {args.command} in {run_dir}")
        manifest = RunManifest(command=args.command, config=config, seed=int(config['run']['seed']))

        if args.command == 'train':
            summary = cmd_train(args, config, run_dir)
        elif args.command == 'sample':
            summary = cmd_sample(args, config, run_dir, ckpt)
        elif args.command == 'eval-density':
            summary = cmd_eval_density(args, config, run_dir, ckpt)
        elif args.command == 'eval-modes':
            summary = cmd_eval_modes(args, config, run_dir, ckpt)
        elif args.command == 'eval-anomaly':
            summary = cmd_eval_anomaly(args, config, run_dir, ckpt)
        else:
            summary = cmd_check(args, config, run_dir)

        if ckpt is not None:
            manifest.summary['checkpoint'] = str(args.resume if resume else args.checkpoint)
        manifest.finish(run_dir, summary)
        logger.info(f"{args.command} finished; manifest at {run_dir / 'manifest.json'}")
        return EXIT_OK
    except Exception as e:
        logger.error(f"Error: {e}")
        if args.verbose:
            logger.error(traceback.format_exc())
        if manifest is not None:
            manifest.fail(run_dir, e)
        elif run_dir is not None:
            (Path(run_dir) / 'FAILED').write_text(f"{type(e).__name__}: {e}\n")
        return exit_code_for(e)
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
