#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Trainer Module

Alternating optimization of the energy function, the generator and the
statistics network:

    for t = 1..T:
        n_phi times: fresh real + latent minibatches, one Adam step on theta
        one latent minibatch, per-dimension shuffle,
        one Adam step on omega (generator loss) and on phi (statistics loss)

Metrics are appended to a CSV every iteration; checkpoints are written every
`run.checkpoint_interval` iterations and at termination. A run resumed from
a checkpoint continues bit-for-bit like an uninterrupted one.
"""

import csv
import logging
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import torch

from checkpoint import Checkpoint, checkpoint_path, save_checkpoint, load_checkpoint, check_compatible
from datasets import BatchStream
from errors import ConfigurationError, NumericFault
from networks import Models, build_models, sample_prior, generate, energy, first_nonfinite_row
from objectives import (LossBreakdown, METRIC_COLUMNS, MI_VARIANTS, energy_loss, generator_terms,
                        gradient_penalty, shuffle_marginals, statistics_loss)
from random_streams import run_streams

try:
    from tqdm import tqdm
    TQDM_AVAILABLE = True
except ImportError:
    TQDM_AVAILABLE = False

# Set up logging
logger = logging.getLogger(__name__)

METRICS_FILE = 'metrics.csv'
CHECKPOINT_DIR = 'checkpoints'


@dataclass
class TrainingConfig:
    """Hyperparameters of the training loop (defaults follow the method's published values)."""
    latent_dim: int
    seed: int = 0
    learning_rate: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    adam_epsilon: float = 1e-8
    penalty_coeff: float = 0.1
    energy_steps: int = 5
    batch_size: int = 64
    total_iters: int = 1000
    mi_variant: str = 'softplus'
    energy_lr: float = None
    generator_lr: float = None
    statistics_lr: float = None

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type in (int, float) and value is not None and (
                    isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigurationError(f"Invalid training configuration: {f.name} must be a number (got {value!r})")
        problems = []
        if not self.learning_rate > 0:
            problems.append(f"learning_rate must be > 0 (got {self.learning_rate})")
        for name in ('energy_lr', 'generator_lr', 'statistics_lr'):
            value = getattr(self, name)
            if value is not None and value < 0:
                problems.append(f"{name} must be >= 0 (got {value})")
        if not 0 <= self.adam_beta1 < 1:
            problems.append(f"adam_beta1 must be in [0, 1) (got {self.adam_beta1})")
        if not 0 <= self.adam_beta2 < 1:
            problems.append(f"adam_beta2 must be in [0, 1) (got {self.adam_beta2})")
        if self.penalty_coeff < 0:
            problems.append(f"penalty_coeff must be >= 0 (got {self.penalty_coeff})")
        if self.energy_steps < 1:
            problems.append(f"energy_steps must be >= 1 (got {self.energy_steps})")
        if self.batch_size < 2:
            problems.append(f"batch_size must be >= 2 (got {self.batch_size})")
        if self.total_iters < 0:
            problems.append(f"total_iters must be >= 0 (got {self.total_iters})")
        if self.latent_dim < 1:
            problems.append(f"latent_dim must be >= 1 (got {self.latent_dim})")
        if self.mi_variant not in MI_VARIANTS:
            problems.append(f"mi_variant must be one of {MI_VARIANTS} (got {self.mi_variant})")
        if problems:
            raise ConfigurationError("Invalid training configuration: " + '; '.join(problems))

    @classmethod
    def from_config(cls, config):
        """Build from the full run configuration (training section + model/run keys)."""
        names = {f.name for f in fields(cls)}
        values = {k: v for k, v in config['training'].items() if k in names}
        return cls(latent_dim=int(config['model']['latent_dim']), seed=int(config['run']['seed']), **values)

    def lr_for(self, network):
        override = getattr(self, f"{network}_lr")
        return self.learning_rate if override is None else override


@dataclass
class Optimizers:
    energy: torch.optim.Adam
    generator: torch.optim.Adam
    statistics: torch.optim.Adam

    def state_dict(self):
        return {name: getattr(self, name).state_dict() for name in ('energy', 'generator', 'statistics')}

    def load_state_dict(self, state):
        for name in ('energy', 'generator', 'statistics'):
            getattr(self, name).load_state_dict(state[name])


def make_optimizers(models, cfg):
    """One Adam optimizer per network, bias-corrected, eps in the denominator."""
    def adam(module, network):
        return torch.optim.Adam(module.parameters(), lr=cfg.lr_for(network),
                                betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_epsilon)
    return Optimizers(
        energy=adam(models.energy, 'energy'),
        generator=adam(models.generator, 'generator'),
        statistics=adam(models.statistics, 'statistics'),
    )


def adam_step(optimizer, grads):
    """
    Apply one Adam update with the given gradients.

    The optimizer carries the parameter set, its moment accumulators and the
    hyperparameters. Gradients are checked before anything is mutated, so a
    non-finite gradient leaves parameters and state untouched.

    Args:
        optimizer (torch.optim.Adam): Optimizer over the parameter set
        grads (sequence): One gradient (or None for zero) per parameter, in
            the optimizer's parameter order

    Raises:
        NumericFault: If any gradient entry is non-finite
    """
    params = [p for group in optimizer.param_groups for p in group['params']]
    if len(params) != len(grads):
        raise ConfigurationError(f"Got {len(grads)} gradients for {len(params)} parameters")
    for index, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ConfigurationError(f"Gradient {index} has shape {tuple(g.shape)}, parameter has {tuple(p.shape)}")
        if not torch.isfinite(g).all():
            # row = flat index of the first bad entry
            raise NumericFault(f"Non-finite gradient for parameter {index} of shape {tuple(p.shape)}",
                               row=first_nonfinite_row(g.reshape(-1, 1)))
    for p, g in zip(params, grads):
        p.grad = torch.zeros_like(p) if g is None else g.detach()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def step_count(optimizer):
    """Number of Adam steps taken (0 before the first step)."""
    for state in optimizer.state.values():
        if 'step' in state:
            return int(state['step'])
    return 0


def _parameter_grads(loss, module):
    return torch.autograd.grad(loss, list(module.parameters()), allow_unused=True)


def train_iteration(models, optimizers, stream, cfg, generator):
    """
    One outer iteration: n_phi energy updates, then one generator and one
    statistics update computed from the same generated batch.

    Args:
        models (Models): Networks and prior
        optimizers (Optimizers): One Adam per network
        stream (BatchStream): Real-data batches of size cfg.batch_size
        cfg (TrainingConfig): Hyperparameters
        generator (torch.Generator): Training random stream

    Returns:
        LossBreakdown: Snapshot taken at the generator/statistics update
    """
    E, G, T = models.energy, models.generator, models.statistics
    dtype = next(E.parameters()).dtype
    device = next(E.parameters()).device
    m = cfg.batch_size

    for _ in range(cfg.energy_steps):
        x_real = stream.next_batch().to(device=device, dtype=dtype)
        z0 = sample_prior(models.prior, m, generator, dtype=dtype, device=device)
        with torch.no_grad():
            x_fake = generate(G, z0)
        loss_E, _ = energy_loss(E, x_real, x_fake, cfg.penalty_coeff)
        adam_step(optimizers.energy, _parameter_grads(loss_E, E))

    z = sample_prior(models.prior, m, generator, dtype=dtype, device=device)
    z_marg = shuffle_marginals(z, generator)
    loss_G, breakdown_G, x_fake = generator_terms(E, T, G, z, z_marg, cfg.mi_variant)
    loss_T = statistics_loss(T, x_fake, z, z_marg, cfg.mi_variant)
    grads_G = _parameter_grads(loss_G, G)
    grads_T = _parameter_grads(loss_T, T)

    # energy terms re-measured at the current theta so every identity of
    # the breakdown holds within one row
    e_real = energy(E, x_real).mean().item()
    penalty = gradient_penalty(E, x_real, create_graph=False).item()
    e_fake = breakdown_G.energy_fake

    adam_step(optimizers.generator, grads_G)
    adam_step(optimizers.statistics, grads_T)

    return LossBreakdown(
        energy_real=e_real,
        energy_fake=e_fake,
        penalty=penalty,
        mi_estimate=breakdown_G.mi_estimate,
        loss_E=e_real - e_fake + cfg.penalty_coeff * penalty,
        loss_G=e_fake - breakdown_G.mi_estimate,
        loss_T=loss_T.item(),
    )


class MetricsWriter:
    """Append-only metrics CSV with the fixed column set."""

    def __init__(self, path, keep_until=None):
        self.path = Path(path)
        rows = []
        if keep_until is not None and self.path.exists():
            with open(self.path, newline='') as f:
                rows = [r for r in csv.DictReader(f) if int(r['step']) <= keep_until]
        self.handle = open(self.path, 'w', newline='')
        self.writer = csv.DictWriter(self.handle, fieldnames=METRIC_COLUMNS)
        self.writer.writeheader()
        self.writer.writerows(rows)
        self.handle.flush()

    def write(self, step, breakdown):
        self.writer.writerow(breakdown.as_row(step))
        self.handle.flush()

    def close(self):
        self.handle.close()


def read_metrics(path):
    """Metrics CSV as a list of dicts with float values (step as int)."""
    with open(path, newline='') as f:
        return [{k: (int(v) if k == 'step' else float(v)) for k, v in row.items()} for row in csv.DictReader(f)]


@dataclass
class TrainingState:
    """Live objects of a run."""
    config: dict
    cfg: TrainingConfig
    models: Models
    optimizers: Optimizers
    stream: BatchStream
    streams: dict
    iteration: int = 0

    def snapshot(self):
        return Checkpoint(
            config=self.config,
            iteration=self.iteration,
            energy=self.models.energy.state_dict(),
            generator=self.models.generator.state_dict(),
            statistics=self.models.statistics.state_dict(),
            optimizers=self.optimizers.state_dict(),
            rng_state={name: g.get_state() for name, g in self.streams.items()},
            stream_state=self.stream.state_dict(),
        )


def load_models(ckpt, config=None, device='cpu'):
    """
    Rebuild the networks of a checkpoint.

    Args:
        ckpt (Checkpoint): Loaded checkpoint
        config (dict, optional): Run configuration the checkpoint must match;
            the checkpoint's own config is used when omitted
        device (str, optional): Target device

    Returns:
        Models: Networks with the checkpoint parameters loaded
    """
    if config is not None:
        check_compatible(ckpt, config)
    model_config = ckpt.config['model']
    models = build_models(model_config, run_streams(ckpt.config['run']['seed'])['init'], device=device)
    models.energy.load_state_dict(ckpt.energy)
    models.generator.load_state_dict(ckpt.generator)
    models.statistics.load_state_dict(ckpt.statistics)
    return models


def prepare_training(config, dataset, resume_from=None):
    """
    Build (or restore) every live object of a run.

    Args:
        config (dict): Full run configuration
        dataset: Training dataset (len() and get(indices))
        resume_from (str or Path, optional): Checkpoint to continue from

    Returns:
        TrainingState: Ready-to-train state
    """
    cfg = TrainingConfig.from_config(config)
    device = config['run'].get('device', 'cpu')
    streams = run_streams(cfg.seed)
    models = build_models(config['model'], streams['init'], device=device)
    optimizers = make_optimizers(models, cfg)
    stream = BatchStream(dataset, cfg.batch_size, streams['data'])
    state = TrainingState(config=config, cfg=cfg, models=models, optimizers=optimizers,
                          stream=stream, streams=streams)

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        check_compatible(ckpt, config)
        models.energy.load_state_dict(ckpt.energy)
        models.generator.load_state_dict(ckpt.generator)
        models.statistics.load_state_dict(ckpt.statistics)
        optimizers.load_state_dict(ckpt.optimizers)
        for name, g in streams.items():
            g.set_state(ckpt.rng_state[name])
        stream.load_state_dict(ckpt.stream_state)
        state.iteration = int(ckpt.iteration)
        logger.info(f"Resumed from {resume_from} at iteration {state.iteration}")
    return state


def run_training(config, dataset, output_dir, resume_from=None, hooks=()):
    """
    Train for `training.total_iters` iterations.

    Args:
        config (dict): Full run configuration
        dataset: Training dataset
        output_dir (str or Path): Run directory (metrics.csv, checkpoints/)
        resume_from (str or Path, optional): Checkpoint to continue from
        hooks (sequence, optional): Callables hook(iteration, models) -> dict,
            called every `run.eval_interval` iterations

    Returns:
        tuple: (final Checkpoint, Path to the metrics CSV)
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    state = prepare_training(config, dataset, resume_from)
    cfg = state.cfg
    run = config['run']
    interval = int(run.get('checkpoint_interval') or 0)
    eval_interval = int(run.get('eval_interval') or 0)
    log_interval = max(1, int(run.get('log_interval') or 100))

    metrics_path = output_dir / METRICS_FILE
    writer = MetricsWriter(metrics_path, keep_until=state.iteration if resume_from is not None else None)
    ckpt_dir = output_dir / CHECKPOINT_DIR

    remaining = range(state.iteration, cfg.total_iters)
    iterator = tqdm(remaining, desc="Training", disable=not logger.isEnabledFor(logging.INFO)) if TQDM_AVAILABLE else remaining
    epoch = state.stream.epoch
    try:
        for t in iterator:
            breakdown = train_iteration(state.models, state.optimizers, state.stream, cfg, state.streams['train'])
            state.iteration = t + 1
            writer.write(state.iteration, breakdown)

            if state.stream.epoch != epoch:
                epoch = state.stream.epoch
                logger.debug(f"Data epoch {epoch} started at iteration {state.iteration}")
            if state.iteration % log_interval == 0 and not TQDM_AVAILABLE:
                logger.info(f"Iteration {state.iteration}/{cfg.total_iters}: loss_E={breakdown.loss_E:.4f} "
                            f"loss_G={breakdown.loss_G:.4f} loss_T={breakdown.loss_T:.4f} "
                            f"penalty={breakdown.penalty:.4f} mi={breakdown.mi_estimate:.4f}")
            if eval_interval and state.iteration % eval_interval == 0:
                for hook in hooks:
                    result = hook(state.iteration, state.models)
                    if result:
                        logger.info(f"Evaluation at iteration {state.iteration}: {result}")
            if interval and state.iteration % interval == 0 and state.iteration != cfg.total_iters:
                save_checkpoint(state.snapshot(), checkpoint_path(ckpt_dir, state.iteration))
    except NumericFault as e:
        logger.error(f"Training halted at iteration {state.iteration + 1}: {e}")
        raise
    finally:
        writer.close()

    final = state.snapshot()
    save_checkpoint(final, checkpoint_path(ckpt_dir, state.iteration))
    logger.info(f"Training finished at iteration {state.iteration}; metrics in {metrics_path}")
    return final, metrics_path
