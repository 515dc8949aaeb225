#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Verification Module

Self-checks behind the `check` command: gradient correctness against
central finite differences, MI estimator sanity, MALA correctness on an
analytic Gaussian target and the partition estimator on a Gaussian
integral. Each check prints one ✓ / ✗ line.
"""

import logging
import math
import time

import torch

from density_eval import GridSpec, estimate_partition
from networks import (ConstantEnergy, ConstantStatistics, IdentityGenerator, MLPEnergy, MLPGenerator,
                      MLPStatistics, QuadraticEnergy, grad_energy_x, grad_energy_z, energy, generate,
                      initialize_parameters)
from objectives import energy_loss, generator_loss, mi_jsd, shuffle_marginals, statistics_loss
from random_streams import make_generator
from sampler import MALAConfig, mala_accept_prob, mala_log_accept, run_mala

# Set up logging
logger = logging.getLogger(__name__)

GRADIENT_RTOL = 1e-4
GRADIENT_ATOL = 1e-8
FD_STEP = 1e-6
SUITES = ('gradients', 'mi', 'mala', 'partition')


class CheckRecorder:
    """Collects pass/fail results and prints them in ✓ / ✗ form."""

    def __init__(self, verbose=False):
        self.verbose = verbose
        self.results = []

    def record(self, name, passed, detail=''):
        self.results.append((name, bool(passed), detail))
        mark = '✓' if passed else '✗'
        print(f"{mark} {name}" + (f" ({detail})" if detail and (self.verbose or not passed) else ''))
        return passed

    def run(self, name, fn):
        """Run fn() -> (passed, detail); an exception counts as a failure."""
        try:
            passed, detail = fn()
        except Exception as e:
            logger.debug(f"Check {name} raised", exc_info=True)
            passed, detail = False, f"{type(e).__name__}: {e}"
        return self.record(name, passed, detail)

    @property
    def passed(self):
        return all(ok for _, ok, _ in self.results)


def tolerance_ratio(a, b, rtol=GRADIENT_RTOL, atol=GRADIENT_ATOL):
    """
    Worst entrywise |a - b| / (atol + rtol * max(|a|, |b|)); at most 1 passes.

    Entries where both values are below atol compare as equal, so a gradient
    that is exactly zero is not judged against finite-difference noise.
    """
    a = a.detach().double().flatten()
    b = b.detach().double().flatten()
    bound = atol + rtol * torch.maximum(a.abs(), b.abs())
    return float(((a - b).abs() / bound).max()) if a.numel() else 0.0


def finite_difference(fn, tensor, entries=None, h=FD_STEP):
    """
    Central differences of scalar fn() w.r.t. chosen flat entries of `tensor`.

    The tensor is perturbed in place and restored.
    """
    flat = tensor.data.view(-1)
    entries = range(flat.numel()) if entries is None else entries
    out = []
    with torch.no_grad():
        for i in entries:
            original = flat[i].item()
            flat[i] = original + h
            plus = float(fn())
            flat[i] = original - h
            minus = float(fn())
            flat[i] = original
            out.append((plus - minus) / (2 * h))
    return torch.tensor(out, dtype=torch.float64)


def _small_models(generator):
    E = initialize_parameters(MLPEnergy((2,), (8, 8), 'swish'), generator).double()
    G = initialize_parameters(MLPGenerator(2, (2,), (8, 8), 'tanh'), generator).double()
    T = initialize_parameters(MLPStatistics((2,), 2, (8, 8), 'softplus'), generator).double()
    return E, G, T


def _parameter_check(loss_fn, module, max_entries=24):
    """Autograd gradient of loss_fn() w.r.t. the module parameters vs finite differences."""
    worst = 0.0
    for p in module.parameters():
        grad, = torch.autograd.grad(loss_fn(), p)
        entries = range(min(p.numel(), max_entries))
        fd = finite_difference(loss_fn, p, entries)
        worst = max(worst, tolerance_ratio(grad.reshape(-1)[:len(fd)], fd))
    return worst


def check_gradients(recorder):
    g = make_generator(1234)
    E, G, T = _small_models(g)
    x = torch.randn(8, 2, generator=g, dtype=torch.float64)
    x_fake = torch.randn(8, 2, generator=g, dtype=torch.float64)
    z = torch.randn(8, 2, generator=g, dtype=torch.float64)
    z_marg = shuffle_marginals(z, g)

    def energy_x():
        analytic = grad_energy_x(E, x)
        fd = finite_difference(lambda: energy(E, x).sum(), x)
        ratio = tolerance_ratio(analytic, fd)
        return ratio <= 1.0, f"error / tolerance {ratio:.2e}"

    def energy_z():
        analytic = grad_energy_z(E, G, z)
        fd = finite_difference(lambda: energy(E, generate(G, z)).sum(), z)
        ratio = tolerance_ratio(analytic, fd)
        return ratio <= 1.0, f"error / tolerance {ratio:.2e}"

    def energy_params():
        ratio = _parameter_check(lambda: energy_loss(E, x, x_fake, 0.1)[0], E)
        return ratio <= 1.0, f"error / tolerance {ratio:.2e}"

    def generator_params():
        ratio = _parameter_check(lambda: generator_loss(E, T, G, z, z_marg)[0], G)
        return ratio <= 1.0, f"error / tolerance {ratio:.2e}"

    def statistics_params():
        fake = generate(G, z).detach()
        ratio = _parameter_check(lambda: statistics_loss(T, fake, z, z_marg), T)
        return ratio <= 1.0, f"error / tolerance {ratio:.2e}"

    def autograd_gradcheck():
        xs = x[:4].clone().requires_grad_(True)
        return torch.autograd.gradcheck(lambda v: energy(E, v), (xs,), eps=FD_STEP, atol=1e-6), 'torch.autograd.gradcheck'

    recorder.run('dE/dx matches finite differences', energy_x)
    recorder.run('dE(G(z))/dz matches finite differences', energy_z)
    recorder.run('energy loss parameter gradients (with penalty)', energy_params)
    recorder.run('generator loss parameter gradients', generator_params)
    recorder.run('statistics loss parameter gradients', statistics_params)
    recorder.run('energy input gradient passes gradcheck', autograd_gradcheck)


def _train_statistics(x, z, g, steps=800, lr=1e-3):
    T = initialize_parameters(MLPStatistics((1,), 1, (64, 64), 'leaky_relu'), g)
    optimizer = torch.optim.Adam(T.parameters(), lr=lr)
    for _ in range(steps):
        idx = torch.randint(0, x.shape[0], (256,), generator=g)
        loss = -mi_jsd(T, x[idx], z[idx], shuffle_marginals(z[idx], g))
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    with torch.no_grad():
        return float(mi_jsd(T, x, z, shuffle_marginals(z, g)))


def check_mi(recorder):
    floor = -2.0 * math.log(2.0)

    def constant_statistics():
        g = make_generator(7)
        x = torch.randn(64, 3, generator=g)
        z = torch.randn(64, 2, generator=g)
        value = float(mi_jsd(ConstantStatistics((3,), 2, 0.0), x, z, shuffle_marginals(z, g)))
        return abs(value - floor) < 1e-6, f"{value:.8f} vs {floor:.8f}"

    def independent_vs_dependent():
        g = make_generator(11)
        z = torch.randn(4096, 1, generator=g)
        independent = _train_statistics(torch.randn(4096, 1, generator=g), z, g)
        dependent = _train_statistics(z.clone(), z, g)
        ok = abs(independent - floor) <= 0.15 and dependent - independent > 0.3
        return ok, f"independent {independent:.4f}, dependent {dependent:.4f}"

    recorder.run('I_JSD with T = 0 equals -2 ln 2', constant_statistics)
    recorder.run('trained I_JSD separates independent from dependent pairs', independent_vs_dependent)


def check_mala(recorder):
    E = QuadraticEnergy(1).double()
    G = IdentityGenerator(1)
    cfg = MALAConfig(step_size=0.1, chain_length=2, burn_in=1)

    def identical_point():
        z = torch.tensor([[1.0], [-0.3]], dtype=torch.float64)
        r = mala_accept_prob(z, z.clone(), E, G, cfg)
        return bool((r == 1.0).all()), f"r = {r.tolist()}"

    def hand_value():
        z = torch.tensor([[1.0]], dtype=torch.float64)
        zt = torch.tensor([[0.8]], dtype=torch.float64)
        log_r = float(mala_log_accept(z, zt, E, G, cfg))
        return abs(log_r - 0.009) < 1e-9, f"log r = {log_r:.12f}"

    def reversibility():
        g = make_generator(5)
        E2, G2 = QuadraticEnergy(2).double(), IdentityGenerator(2)
        z = torch.randn(32, 2, generator=g, dtype=torch.float64)
        zt = z + 0.3 * torch.randn(32, 2, generator=g, dtype=torch.float64)
        forward = mala_log_accept(z, zt, E2, G2, cfg)
        backward = mala_log_accept(zt, z, E2, G2, cfg)
        err = float((forward + backward).abs().max())
        return err < 1e-8, f"max |log r + log r'| = {err:.2e}"

    def gaussian_moments():
        g = make_generator(3)
        E2, G2 = QuadraticEnergy(2).double(), IdentityGenerator(2)
        chain_cfg = MALAConfig(step_size=0.05, chain_length=550, burn_in=50)
        z0 = torch.randn(1000, 2, generator=g, dtype=torch.float64)
        result = run_mala(z0, E2, G2, chain_cfg, g)
        samples = result.chain.reshape(-1, 2)
        mean = samples.mean(0)
        cov = torch.cov(samples.T)
        ok = bool(mean.abs().max() < 0.05) and bool((cov - torch.eye(2, dtype=torch.float64)).abs().max() < 0.05)
        return ok, f"mean {mean.tolist()}, cov diag {cov.diagonal().tolist()}"

    recorder.run('r(z, z) = 1 exactly', identical_point)
    recorder.run('acceptance ratio matches the hand-evaluated value', hand_value)
    recorder.run('log r(z -> z~) = -log r(z~ -> z)', reversibility)
    recorder.run('chains reproduce the moments of N(0, I)', gaussian_moments)


def check_partition(recorder):
    def uniform():
        value = estimate_partition(ConstantEnergy((2,), 0.0), GridSpec((0.0, 1.0, 0.0, 1.0), (50, 50)))
        return abs(value) < 1e-9, f"log Z = {value:.3e}"

    def gaussian():
        value = estimate_partition(QuadraticEnergy(2), GridSpec((-6.0, 6.0, -6.0, 6.0), (400, 400)))
        target = math.log(2 * math.pi)
        return abs(value - target) < 1e-3, f"log Z = {value:.6f}, log 2pi = {target:.6f}"

    def refinement():
        coarse = estimate_partition(QuadraticEnergy(2), GridSpec((-6.0, 6.0, -6.0, 6.0), (400, 400)))
        fine = estimate_partition(QuadraticEnergy(2), GridSpec((-6.0, 6.0, -6.0, 6.0), (800, 800)))
        return abs(coarse - fine) < 1e-3, f"difference {abs(coarse - fine):.2e}"

    recorder.run('log Z of the uniform density on [0,1]^2 is 0', uniform)
    recorder.run('log Z of a standard Gaussian is log 2pi', gaussian)
    recorder.run('log Z is stable under grid refinement', refinement)


SUITE_FUNCTIONS = {
    'gradients': check_gradients,
    'mi': check_mi,
    'mala': check_mala,
    'partition': check_partition,
}


def run_checks(suites=SUITES, verbose=False):
    """
    Run the verification suites.

    Args:
        suites (iterable, optional): Names from SUITES. Defaults to all.
        verbose (bool, optional): Print details for passing checks too

    Returns:
        CheckRecorder: Results of every check
    """
    recorder = CheckRecorder(verbose)
    for name in suites:
        print(f"\nSuite: {name}")
        start = time.time()
        SUITE_FUNCTIONS[name](recorder)
        logger.debug(f"Suite {name} finished in {time.time() - start:.1f}s")
    failed = [name for name, ok, _ in recorder.results if not ok]
    print(f"\n{len(recorder.results) - len(failed)}/{len(recorder.results)} checks passed")
    return recorder
