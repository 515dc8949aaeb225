#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Mode Evaluation Module

Mode coverage of a generator: classify samples into discrete modes, tally
them into histograms and compare against the data's mode distribution.

Two classifiers are provided: nearest-center assignment for the synthetic
2D mixtures, and a per-channel digit classifier combined into a base-10
code for StackedMNIST.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from datasets import digits_to_mode
from errors import ConfigurationError, MissingArtifactError, ProtocolError
from networks import generate, initialize_parameters, sample_prior

try:
    from tqdm import tqdm
    TQDM_AVAILABLE = True
except ImportError:
    TQDM_AVAILABLE = False

# Set up logging
logger = logging.getLogger(__name__)

REQUIRED_CLASSIFIER_ACCURACY = 0.99
PER_MODE_REPORT_LIMIT = 1000


@dataclass
class ModeHistogram:
    """Counts of samples per mode id in [0, M)."""
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)

    @classmethod
    def empty(cls, capacity):
        return cls(np.zeros(int(capacity), dtype=np.int64))

    @property
    def capacity(self):
        return int(self.counts.shape[0])

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def captured_modes(self):
        return int(np.count_nonzero(self.counts))

    def merge(self, other):
        if other.capacity != self.capacity:
            raise ProtocolError(f"Cannot merge histograms with M={self.capacity} and M={other.capacity}")
        return ModeHistogram(self.counts + other.counts)


def histogram_from_ids(ids, capacity):
    """
    Tally mode ids into a histogram.

    Raises:
        ProtocolError: If any id lies outside [0, capacity)
    """
    ids = np.asarray(ids, dtype=np.int64).ravel()
    bad = (ids < 0) | (ids >= capacity)
    if bad.any():
        raise ProtocolError(f"Classifier produced mode id {int(ids[bad][0])} outside [0, {capacity})")
    return ModeHistogram(np.bincount(ids, minlength=capacity))


def mode_histogram(classifier, samples, capacity):
    """
    Histogram of classifier outputs over a sample batch.

    Args:
        classifier: Object with `mode_capacity` and `classify(samples)`
        samples (torch.Tensor): Sample batch
        capacity (int): Mode capacity M

    Returns:
        ModeHistogram: Counts with total equal to the sample count

    Raises:
        ProtocolError: If the classifier capacity differs from M or it emits an id >= M
    """
    if classifier.mode_capacity != capacity:
        raise ProtocolError(f"Classifier mode capacity {classifier.mode_capacity} does not match M={capacity}")
    return histogram_from_ids(classifier.classify(samples), capacity)


def nearest_mode_assign(samples, centers, sigma, cutoff=3.0):
    """
    Assign every sample to its nearest center.

    Ties go to the lowest-index center. A sample is in-mode when its distance
    to the assigned center is at most cutoff * sigma.

    Returns:
        tuple: (mode ids as int64 tensor, boolean in-mode tensor)
    """
    centers = torch.as_tensor(centers)
    if centers.dim() != 2 or centers.shape[0] == 0:
        raise ConfigurationError("Nearest-mode assignment needs at least one center")
    if not sigma > 0:
        raise ConfigurationError(f"Mode sigma must be > 0, got {sigma}")
    samples = samples.detach().reshape(samples.shape[0], -1)
    centers = centers.to(device=samples.device, dtype=samples.dtype)
    distances = torch.cdist(samples, centers, compute_mode='donot_use_mm_for_euclid_dist')
    nearest, ids = distances.min(dim=1)
    return ids, nearest <= cutoff * sigma


class NearestCenterClassifier:
    """Mode classifier for mixtures with known centers."""

    def __init__(self, centers, sigma, cutoff=3.0):
        self.centers = torch.as_tensor(centers)
        self.sigma = float(sigma)
        self.cutoff = float(cutoff)
        self.mode_capacity = int(self.centers.shape[0])

    def classify(self, samples):
        ids, _ = nearest_mode_assign(samples, self.centers, self.sigma, self.cutoff)
        return ids.cpu().numpy()

    def in_mode_fraction(self, samples):
        _, in_mode = nearest_mode_assign(samples, self.centers, self.sigma, self.cutoff)
        return float(in_mode.double().mean())


class DigitClassifierNet(nn.Module):
    """Small MNIST classifier: two conv/pool blocks and two dense layers."""

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 32, kernel_size=5)
        self.conv2 = nn.Conv2d(32, 64, kernel_size=5)
        self.fc1 = nn.Linear(64 * 4 * 4, 128)
        self.fc2 = nn.Linear(128, 10)

    def forward(self, x):
        x = F.relu(F.max_pool2d(self.conv1(x), 2))
        x = F.relu(F.max_pool2d(self.conv2(x), 2))
        x = F.relu(self.fc1(x.flatten(1)))
        return self.fc2(x)


def _predict_digits(net, images, batch_size=1000):
    net.eval()
    with torch.no_grad():
        return torch.cat([net(chunk).argmax(1) for chunk in images.split(batch_size)])


class StackedDigitClassifier:
    """
    Mode classifier for stacked digit images (n, stacks, 28, 28).

    Each channel is classified independently; channel 0 is the most
    significant digit of the mode id.
    """

    def __init__(self, net, stacks, batch_size=1000):
        self.net = net
        self.stacks = int(stacks)
        self.batch_size = batch_size
        self.mode_capacity = 10 ** self.stacks

    def classify(self, samples):
        if samples.dim() != 4 or samples.shape[1] != self.stacks:
            raise ConfigurationError(f"Expected ({self.stacks}-channel) stacked images, got shape {tuple(samples.shape)}")
        n = samples.shape[0]
        flat = samples.reshape(n * self.stacks, 1, *samples.shape[2:]).float()
        digits = _predict_digits(self.net, flat, self.batch_size).reshape(n, self.stacks)
        return digits_to_mode(digits.cpu().numpy())


def classifier_accuracy(net, images, labels, batch_size=1000):
    """Fraction of images whose predicted digit equals the label."""
    images = torch.as_tensor(images, dtype=torch.float32)
    if images.dim() == 3:
        images = images.unsqueeze(1)
    predicted = _predict_digits(net, images, batch_size).cpu().numpy()
    return float((predicted == np.asarray(labels)).mean())


def train_digit_classifier(mnist, generator, epochs=3, batch_size=128, learning_rate=1e-3):
    """
    Train DigitClassifierNet on MNIST.

    Args:
        mnist (dict): Output of datasets.load_mnist
        generator (torch.Generator): Stream for initialization and shuffling

    Returns:
        tuple: (trained network, test accuracy)
    """
    net = initialize_parameters(DigitClassifierNet(), generator)

    x = torch.as_tensor(mnist['x_train'], dtype=torch.float32).unsqueeze(1) / 255.0
    y = torch.as_tensor(mnist['y_train'], dtype=torch.int64)
    optimizer = torch.optim.Adam(net.parameters(), lr=learning_rate)
    for epoch in range(epochs):
        net.train()
        order = torch.randperm(x.shape[0], generator=generator)
        batches = order.split(batch_size)
        iterator = tqdm(batches, desc=f"Classifier epoch {epoch + 1}/{epochs}") if TQDM_AVAILABLE else batches
        for idx in iterator:
            optimizer.zero_grad()
            loss = F.cross_entropy(net(x[idx]), y[idx])
            loss.backward()
            optimizer.step()
    accuracy = classifier_accuracy(net, torch.as_tensor(mnist['x_test'], dtype=torch.float32) / 255.0, mnist['y_test'])
    logger.info(f"Digit classifier trained for {epochs} epochs, test accuracy {accuracy:.4f}")
    return net, accuracy


def save_digit_classifier(net, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(net.state_dict(), path)
    return path


def load_digit_classifier(path):
    """Load DigitClassifierNet weights saved with save_digit_classifier."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError('Digit classifier', path)
    net = DigitClassifierNet()
    net.load_state_dict(torch.load(path, weights_only=True))
    net.eval()
    return net


def require_accuracy(accuracy, required=REQUIRED_CLASSIFIER_ACCURACY, strict=True):
    """Refuse (or warn about) a classifier below the required test accuracy."""
    if accuracy >= required:
        return True
    message = f"Digit classifier test accuracy {accuracy:.4f} is below the required {required:.2f}"
    if strict:
        raise ProtocolError(message)
    logger.warning(message)
    return False


@dataclass
class KLDivergence:
    """KL(generated || reference) in nats; infinite when the supports differ."""
    value: float
    infinite: bool = False

    def as_dict(self):
        return {'kl': None if self.infinite else self.value, 'kl_infinite': self.infinite}


def empirical_kl(gen, ref):
    """
    Empirical KL divergence between two mode histograms.

    sum over modes with gen_i > 0 of p_i ln(p_i / q_i), p and q the
    normalized histograms. A mode with gen_i > 0 and ref_i = 0 makes the
    divergence infinite.

    Raises:
        ProtocolError: If the capacities differ or a histogram is empty
    """
    if gen.capacity != ref.capacity:
        raise ProtocolError(f"KL needs equal mode capacities, got {gen.capacity} and {ref.capacity}")
    if gen.total == 0 or ref.total == 0:
        raise ProtocolError("KL is undefined for an empty histogram")
    support = gen.counts > 0
    if (ref.counts[support] == 0).any():
        return KLDivergence(math.inf, infinite=True)
    p = gen.counts[support] / gen.total
    q = ref.counts[support] / ref.total
    return KLDivergence(float(np.sum(p * np.log(p / q))))


def uniform_reference(capacity):
    """Reference histogram with equal mass on every mode."""
    return ModeHistogram(np.ones(int(capacity), dtype=np.int64))


def generator_histogram(G, prior, classifier, count, generator, batch_size=1000):
    """
    Classify `count` fresh generator samples batch by batch.

    Returns:
        ModeHistogram: Merged histogram over all batches
    """
    histogram = ModeHistogram.empty(classifier.mode_capacity)
    remaining = int(count)
    with torch.no_grad():
        while remaining > 0:
            m = min(batch_size, remaining)
            samples = generate(G, sample_prior(prior, m, generator))
            histogram = histogram.merge(mode_histogram(classifier, samples, classifier.mode_capacity))
            remaining -= m
    return histogram


def mode_report(histogram, reference, extra=None):
    """JSON-ready summary of a mode evaluation."""
    kl = empirical_kl(histogram, reference)
    report = {
        'captured_modes': histogram.captured_modes,
        'mode_capacity': histogram.capacity,
        'sample_count': histogram.total,
        **kl.as_dict(),
    }
    if histogram.capacity <= PER_MODE_REPORT_LIMIT:
        report['counts'] = histogram.counts.tolist()
    report.update(extra or {})
    logger.info(f"Captured {histogram.captured_modes}/{histogram.capacity} modes from {histogram.total} samples, "
                f"KL={'inf' if kl.infinite else f'{kl.value:.4f}'}")
    return report
