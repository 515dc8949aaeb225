#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Anomaly Module

Score-norm anomaly detection with a trained energy function.

The decision score of a sample is ||dE/dx||^2: small near the critical
points of the learned density, large away from them. Thresholds are set
from an assumed contamination rate; AUPRC is threshold free.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, asdict

import numpy as np
import torch
from sklearn.metrics import average_precision_score, precision_recall_fscore_support

from errors import ConfigurationError, ProtocolError
from networks import check_sample_batch

# Set up logging
logger = logging.getLogger(__name__)

ROLLING_WINDOW = 10


@dataclass
class AnomalyScoreSet:
    """
    Per-sample decision scores.

    Attributes:
        scores (np.ndarray): ||dE/dx||^2 of every kept sample (>= 0)
        labels (np.ndarray or None): 1 = anomaly, aligned with scores
        kept_index (np.ndarray): Positions of the kept samples in the input
        excluded (int): Samples dropped for non-finite energy or gradient
    """
    scores: np.ndarray
    labels: np.ndarray = None
    kept_index: np.ndarray = None
    excluded: int = 0

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.scores.shape:
                raise ConfigurationError(f"Labels ({self.labels.shape}) do not align with scores ({self.scores.shape})")
        if self.kept_index is None:
            self.kept_index = np.arange(self.scores.shape[0])

    def require_labels(self):
        if self.labels is None:
            raise ProtocolError("Anomaly metrics need ground-truth labels")
        return self.labels


def score_samples(E, x, labels=None, batch_size=4096):
    """
    Score-norm decision function for every sample.

    Samples whose energy or gradient is non-finite are excluded (with a
    warning) together with their labels.

    Args:
        E (nn.Module): Trained energy network
        x (torch.Tensor): Test samples
        labels (array-like, optional): Ground truth, 1 = anomaly
        batch_size (int, optional): Rows per gradient evaluation

    Returns:
        AnomalyScoreSet: Scores of the finite samples
    """
    check_sample_batch(x, E.data_shape)
    dtype = next(E.parameters(), torch.empty(0, dtype=x.dtype)).dtype
    parts = []
    for chunk in x.split(batch_size):
        chunk = chunk.detach().to(dtype).requires_grad_(True)
        with torch.enable_grad():
            e = E(chunk)
            grad, = torch.autograd.grad(e.sum(), chunk, allow_unused=True)
        if grad is None:
            grad = torch.zeros_like(chunk)
        s = grad.detach().flatten(1).pow(2).sum(1)
        s = torch.where(torch.isfinite(e.detach()), s, torch.full_like(s, float('nan')))
        parts.append(s.double().cpu())
    scores = torch.cat(parts).numpy()

    finite = np.isfinite(scores)
    excluded = int((~finite).sum())
    if excluded:
        logger.warning(f"Excluded {excluded} of {scores.shape[0]} samples with non-finite energy or gradient")
    kept = np.nonzero(finite)[0]
    return AnomalyScoreSet(
        scores=scores[kept],
        labels=None if labels is None else np.asarray(labels)[kept],
        kept_index=kept,
        excluded=excluded,
    )


@dataclass
class PRF1Report:
    """Precision, recall and F1 at a contamination-rate threshold."""
    precision: float
    recall: float
    f1: float
    threshold: float
    contamination_rate: float
    predicted_anomalies: int
    degenerate: bool = False

    def as_dict(self):
        return asdict(self)


def evaluate_prf1_at_rate(score_set, contamination):
    """
    Predict the top ceil(contamination * N) scores anomalous and score the
    prediction against the labels.

    Equal scores are ranked by input order. The reported threshold is the
    midpoint between the lowest flagged and the highest unflagged score.
    Undefined precision or recall (no predicted or no true anomalies) is
    reported as 0 with `degenerate` set.

    Raises:
        ProtocolError: If labels are missing
        ConfigurationError: If contamination is not in (0, 1)
    """
    labels = score_set.require_labels()
    if not 0 < contamination < 1:
        raise ConfigurationError(f"Contamination rate must be in (0, 1), got {contamination}")
    scores = score_set.scores
    n = scores.shape[0]
    if n == 0:
        raise ProtocolError("No scored samples to evaluate")
    k = min(n, max(1, math.ceil(round(contamination * n, 9))))

    order = np.argsort(-scores, kind='stable')
    predicted = np.zeros(n, dtype=np.int64)
    predicted[order[:k]] = 1
    lowest_flagged = scores[order[k - 1]]
    threshold = lowest_flagged if k == n else 0.5 * (lowest_flagged + scores[order[k]])

    precision, recall, f1, _ = precision_recall_fscore_support(
        labels, predicted, average='binary', pos_label=1, zero_division=0)
    degenerate = labels.sum() == 0
    if degenerate:
        logger.warning("No true anomalies among the labels; recall is undefined and reported as 0")
    return PRF1Report(
        precision=float(precision), recall=float(recall), f1=float(f1),
        threshold=float(threshold), contamination_rate=float(contamination),
        predicted_anomalies=int(k), degenerate=bool(degenerate),
    )


def auprc(score_set):
    """
    Area under the precision-recall curve (step-wise average precision;
    equal scores form one threshold).

    Raises:
        ProtocolError: If labels are missing or hold no positive
    """
    labels = score_set.require_labels()
    if labels.sum() == 0:
        raise ProtocolError("AUPRC needs at least one positive label")
    return float(average_precision_score(labels, score_set.scores))


def anomaly_report(score_set, contamination):
    """P/R/F1 at the contamination rate plus AUPRC, JSON ready."""
    report = evaluate_prf1_at_rate(score_set, contamination).as_dict()
    report['auprc'] = auprc(score_set)
    report['scored'] = int(score_set.scores.shape[0])
    report['excluded'] = int(score_set.excluded)
    logger.info(f"Anomaly detection: P={report['precision']:.4f} R={report['recall']:.4f} "
                f"F1={report['f1']:.4f} AUPRC={report['auprc']:.4f}")
    return report


class RollingAnomalyEvaluation:
    """
    Trainer hook averaging anomaly metrics over the most recent evaluations.

    Called as hook(iteration, models); returns the rolling means.
    """

    def __init__(self, test_x, test_labels, contamination, window=ROLLING_WINDOW):
        self.test_x = test_x
        self.test_labels = np.asarray(test_labels)
        self.contamination = contamination
        self.history = deque(maxlen=window)

    def __call__(self, iteration, models):
        scores = score_samples(models.energy, self.test_x, self.test_labels)
        report = evaluate_prf1_at_rate(scores, self.contamination)
        self.history.append({
            'iteration': iteration,
            'precision': report.precision,
            'recall': report.recall,
            'f1': report.f1,
            'auprc': auprc(scores),
        })
        return self.summary()

    def summary(self):
        if not self.history:
            return {}
        keys = ('precision', 'recall', 'f1', 'auprc')
        means = {k: float(np.mean([h[k] for h in self.history])) for k in keys}
        means['evaluations'] = len(self.history)
        return means
