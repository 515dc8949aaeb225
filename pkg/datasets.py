#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Datasets Module

Dataset construction and ingestion:

- synthetic 2D distributions (8gaussians, 25gaussians, swissroll)
- StackedMNIST, built from MNIST digits and persisted as index archives
- the KDD99 10% tabular pipeline (one-hot + min-max, anomaly labels, split)
- the MNIST held-out digit anomaly split

plus the BatchStream that feeds fixed-size minibatches to the trainer.
"""

import hashlib
import json
import logging
import math
import shutil
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import pandas as pd
import requests
import torch
from sklearn.datasets import make_swiss_roll

from errors import ConfigurationError, IngestionError, IntegrityError
from random_streams import derive_seed, run_streams

# Set up logging
logger = logging.getLogger(__name__)

SYNTHETIC_FAMILIES = ('8gaussians', '25gaussians', 'swissroll')

# family -> (sigma, scale, noise)
SYNTHETIC_DEFAULTS = {
    '8gaussians': (0.02, 2.0, None),
    '25gaussians': (0.05, 2.0, None),
    'swissroll': (None, 0.2, 0.25),
}

KDD99_URL = 'http://kdd.ics.uci.edu/databases/kddcup99/kddcup.data_10_percent.gz'
KDD99_FILE = 'kddcup.data_10_percent.gz'
KDD99_COLUMNS = [
    'duration', 'protocol_type', 'service', 'flag', 'src_bytes', 'dst_bytes', 'land',
    'wrong_fragment', 'urgent', 'hot', 'num_failed_logins', 'logged_in', 'num_compromised',
    'root_shell', 'su_attempted', 'num_root', 'num_file_creations', 'num_shells',
    'num_access_files', 'num_outbound_cmds', 'is_host_login', 'is_guest_login', 'count',
    'srv_count', 'serror_rate', 'srv_serror_rate', 'rerror_rate', 'srv_rerror_rate',
    'same_srv_rate', 'diff_srv_rate', 'srv_diff_host_rate', 'dst_host_count',
    'dst_host_srv_count', 'dst_host_same_srv_rate', 'dst_host_diff_srv_rate',
    'dst_host_same_src_port_rate', 'dst_host_srv_diff_host_rate', 'dst_host_serror_rate',
    'dst_host_srv_serror_rate', 'dst_host_rerror_rate', 'dst_host_srv_rerror_rate', 'label',
]
KDD99_CATEGORICAL = ['protocol_type', 'service', 'flag']
KDD99_CONVENTIONS = ('normal_is_anomaly', 'attack_is_anomaly')
MAX_MALFORMED_FRACTION = 0.001


# ---------------------------------------------------------------------------
# Batch streaming
# ---------------------------------------------------------------------------

class ArrayDataset:
    """In-memory dataset over a tensor of samples."""

    def __init__(self, values):
        self.values = torch.as_tensor(values)

    def __len__(self):
        return self.values.shape[0]

    def get(self, indices):
        return self.values[indices]


class BatchStream:
    """
    Endless stream of fixed-size minibatches.

    Each epoch visits a fresh permutation drawn from the run's data stream;
    the trailing partial batch of an epoch is dropped. Epoch boundaries are
    recorded as the number of batches served when each new epoch began.
    """

    def __init__(self, dataset, batch_size, generator):
        if batch_size < 1 or batch_size > len(dataset):
            raise ConfigurationError(f"Batch size {batch_size} does not fit a dataset of {len(dataset)} samples")
        self.dataset = dataset
        self.batch_size = int(batch_size)
        self.generator = generator
        self.order = None
        self.cursor = 0
        self.epoch = 0
        self.batches_served = 0
        self.epoch_boundaries = []

    def _reshuffle(self):
        if self.order is not None:
            self.epoch += 1
            self.epoch_boundaries.append(self.batches_served)
        self.order = torch.randperm(len(self.dataset), generator=self.generator)
        self.cursor = 0

    def next_batch(self):
        if self.order is None or self.cursor + self.batch_size > len(self.dataset):
            self._reshuffle()
        indices = self.order[self.cursor:self.cursor + self.batch_size]
        self.cursor += self.batch_size
        self.batches_served += 1
        return self.dataset.get(indices)

    def state_dict(self):
        return {
            'order': self.order,
            'cursor': self.cursor,
            'epoch': self.epoch,
            'batches_served': self.batches_served,
            'epoch_boundaries': list(self.epoch_boundaries),
        }

    def load_state_dict(self, state):
        self.order = state['order']
        self.cursor = int(state['cursor'])
        self.epoch = int(state['epoch'])
        self.batches_served = int(state['batches_served'])
        self.epoch_boundaries = list(state['epoch_boundaries'])


# ---------------------------------------------------------------------------
# Synthetic 2D
# ---------------------------------------------------------------------------

@dataclass
class Synthetic2DSpec:
    """
    Geometry of a synthetic 2D dataset.

    8gaussians: 8 centers on a circle of radius `scale`; 25gaussians: the
    5x5 grid {-2..2}^2 multiplied by `scale`; swissroll: the 2D spiral with
    isotropic `noise`, multiplied by `scale`.
    """
    family: str
    sigma: float = None
    scale: float = None
    noise: float = None

    def __post_init__(self):
        if self.family not in SYNTHETIC_FAMILIES:
            raise ConfigurationError(f"Unknown synthetic family '{self.family}', expected one of {SYNTHETIC_FAMILIES}")
        sigma, scale, noise = SYNTHETIC_DEFAULTS[self.family]
        self.sigma = sigma if self.sigma is None else float(self.sigma)
        self.scale = scale if self.scale is None else float(self.scale)
        self.noise = noise if self.noise is None else float(self.noise)
        if self.sigma is not None and self.sigma < 0:
            raise ConfigurationError(f"Component sigma must be >= 0, got {self.sigma}")

    @classmethod
    def from_config(cls, data_config):
        return cls(data_config['family'], data_config.get('sigma'), data_config.get('scale'),
                   data_config.get('noise'))

    @property
    def centers(self):
        """Mode centers (M, 2) for the Gaussian families, None for swissroll."""
        if self.family == '8gaussians':
            angles = torch.arange(8, dtype=torch.float64) * (2 * math.pi / 8)
            return (self.scale * torch.stack([angles.cos(), angles.sin()], dim=1)).float()
        if self.family == '25gaussians':
            grid = torch.arange(-2, 3, dtype=torch.float32)
            return self.scale * torch.cartesian_prod(grid, grid)
        return None


def synthetic2d(spec, n, generator, return_components=False):
    """
    Draw n i.i.d. samples.

    Args:
        spec (Synthetic2DSpec): Dataset geometry
        n (int): Number of samples, n >= 1
        generator (torch.Generator): Random stream
        return_components (bool, optional): Also return the mixture component
            of every sample (Gaussian families only)

    Returns:
        torch.Tensor: (n, 2) float32 samples, or (samples, components)
    """
    if int(n) < 1:
        raise ConfigurationError(f"Sample count must be >= 1, got {n}")
    n = int(n)
    if spec.family == 'swissroll':
        points, _ = make_swiss_roll(n, noise=spec.noise, random_state=derive_seed(generator))
        samples = torch.as_tensor(points[:, [0, 2]] * spec.scale, dtype=torch.float32)
        return (samples, None) if return_components else samples

    centers = spec.centers
    components = torch.randint(0, centers.shape[0], (n,), generator=generator)
    samples = centers[components] + spec.sigma * torch.randn(n, 2, generator=generator)
    return (samples, components) if return_components else samples


# ---------------------------------------------------------------------------
# MNIST / StackedMNIST
# ---------------------------------------------------------------------------

def load_mnist(path):
    """
    Load MNIST from a local `mnist.npz` (x_train, y_train, x_test, y_test).

    Raises:
        IngestionError: If the file is missing or lacks the expected arrays
    """
    path = Path(path) if path else None
    if path is None or not path.exists():
        raise IngestionError(f"MNIST source not found: {path}")
    with np.load(path) as data:
        missing = {'x_train', 'y_train', 'x_test', 'y_test'} - set(data.files)
        if missing:
            raise IngestionError(f"MNIST archive {path} lacks arrays: {sorted(missing)}")
        return {k: data[k] for k in ('x_train', 'y_train', 'x_test', 'y_test')}


@dataclass
class StackedMNISTSpec:
    stacks: int = 3
    train_count: int = 1_280_000
    eval_count: int = 260_000

    def __post_init__(self):
        if self.stacks not in (3, 4):
            raise ConfigurationError(f"StackedMNIST supports 3 or 4 stacks, got {self.stacks}")
        if self.train_count < 1 or self.eval_count < 0:
            raise ConfigurationError(f"Invalid StackedMNIST counts: train={self.train_count}, eval={self.eval_count}")

    @property
    def mode_capacity(self):
        return 10 ** self.stacks


def digits_to_mode(digit_labels):
    """Base-10 positional code of per-channel digits (channel 0 most significant)."""
    digit_labels = np.asarray(digit_labels, dtype=np.int64)
    stacks = digit_labels.shape[1]
    weights = 10 ** np.arange(stacks - 1, -1, -1, dtype=np.int64)
    return digit_labels @ weights


def mode_to_digits(modes, stacks):
    """Inverse of digits_to_mode."""
    modes = np.asarray(modes, dtype=np.int64)
    return np.stack([(modes // 10 ** (stacks - 1 - c)) % 10 for c in range(stacks)], axis=1)


@dataclass
class StackedMNISTArchive:
    """Fixed StackedMNIST sample: digit indices per channel plus mode ids."""
    spec: StackedMNISTSpec
    seed: int
    train_indices: np.ndarray
    eval_indices: np.ndarray
    train_modes: np.ndarray
    eval_modes: np.ndarray
    manifest: dict = field(default_factory=dict)

    def content_hash(self):
        digest = hashlib.sha256()
        for array in (self.train_indices, self.eval_indices, self.train_modes, self.eval_modes):
            digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()


def _archive_paths(archive_dir, spec, seed):
    stem = Path(archive_dir) / f"stacked_mnist_{spec.stacks}_seed{seed}"
    return stem.with_suffix('.npz'), stem.with_suffix('.json')


def build_stacked_mnist(spec, labels, seed, archive_dir=None):
    """
    Randomly sample and fix a StackedMNIST dataset.

    Every sample stacks `spec.stacks` independently drawn digit images; its
    mode id is the base-10 code of the digit labels. The result depends only
    on (spec, seed, labels); when `archive_dir` already holds a build for the
    same spec and seed its manifest hash must match the rebuild.

    Args:
        spec (StackedMNISTSpec): Counts and stack depth
        labels (np.ndarray): Digit labels of the source images
        seed (int): Build seed
        archive_dir (str or Path, optional): Where to persist the archive

    Returns:
        StackedMNISTArchive: The built dataset

    Raises:
        IngestionError: If no source labels are given
        IntegrityError: If an existing archive disagrees with the rebuild
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise IngestionError("StackedMNIST needs source digit images; none were given")
    generator = run_streams(seed)['build']
    total = spec.train_count + spec.eval_count
    indices = torch.randint(0, labels.shape[0], (total, spec.stacks), generator=generator).numpy().astype(np.int32)
    modes = digits_to_mode(labels[indices])
    archive = StackedMNISTArchive(
        spec=spec, seed=int(seed),
        train_indices=indices[:spec.train_count], eval_indices=indices[spec.train_count:],
        train_modes=modes[:spec.train_count], eval_modes=modes[spec.train_count:],
    )
    archive.manifest = {
        'kind': 'stacked_mnist',
        'spec': asdict(spec),
        'seed': int(seed),
        'counts': {'train': spec.train_count, 'eval': spec.eval_count},
        'sha256': archive.content_hash(),
    }

    if archive_dir is not None:
        npz_path, manifest_path = _archive_paths(archive_dir, spec, seed)
        if manifest_path.exists():
            stored = json.loads(manifest_path.read_text())
            if stored.get('sha256') != archive.manifest['sha256']:
                raise IntegrityError(f"Rebuilt StackedMNIST does not match {manifest_path} "
                                     f"(stored {stored.get('sha256')}, rebuilt {archive.manifest['sha256']})")
            logger.info(f"Verified existing StackedMNIST archive {npz_path}")
        else:
            npz_path.parent.mkdir(parents=True, exist_ok=True)
            np.savez_compressed(npz_path, train_indices=archive.train_indices, eval_indices=archive.eval_indices,
                                train_modes=archive.train_modes, eval_modes=archive.eval_modes)
            manifest_path.write_text(json.dumps(archive.manifest, indent=2))
            logger.info(f"Persisted StackedMNIST ({spec.stacks} stacks, {total} samples) to {npz_path}")
    return archive


def load_stacked_mnist(npz_path):
    """Load a persisted archive and verify it against its manifest."""
    npz_path = Path(npz_path)
    manifest_path = npz_path.with_suffix('.json')
    if not npz_path.exists() or not manifest_path.exists():
        raise IngestionError(f"StackedMNIST archive not found: {npz_path}")
    manifest = json.loads(manifest_path.read_text())
    with np.load(npz_path) as data:
        archive = StackedMNISTArchive(
            spec=StackedMNISTSpec(**manifest['spec']), seed=manifest['seed'],
            train_indices=data['train_indices'], eval_indices=data['eval_indices'],
            train_modes=data['train_modes'], eval_modes=data['eval_modes'], manifest=manifest,
        )
    if archive.content_hash() != manifest['sha256']:
        raise IntegrityError(f"StackedMNIST archive {npz_path} fails its manifest hash")
    return archive


class StackedMNISTDataset:
    """Materializes stacked images (b, stacks, 28, 28) in [0, 1] on demand."""

    def __init__(self, images, indices):
        self.images = torch.as_tensor(np.asarray(images), dtype=torch.uint8)
        self.indices = torch.as_tensor(np.asarray(indices, dtype=np.int64))

    def __len__(self):
        return self.indices.shape[0]

    def get(self, indices):
        return self.images[self.indices[indices]].float() / 255.0


@dataclass
class HeldoutDigitSplit:
    digit: int
    train_x: torch.Tensor
    test_x: torch.Tensor
    test_labels: np.ndarray


def mnist_heldout_digit(mnist, digit):
    """
    Train on the nine other digits; the full test set is scored with the
    held-out digit as the positive (anomalous) class.
    """
    if not 0 <= int(digit) <= 9:
        raise ConfigurationError(f"Held-out digit must be in 0..9, got {digit}")
    keep = mnist['y_train'] != digit
    to_tensor = lambda a: torch.as_tensor(a, dtype=torch.float32).unsqueeze(1) / 255.0
    return HeldoutDigitSplit(
        digit=int(digit),
        train_x=to_tensor(mnist['x_train'][keep]),
        test_x=to_tensor(mnist['x_test']),
        test_labels=(mnist['y_test'] == digit).astype(np.int64),
    )


# ---------------------------------------------------------------------------
# KDD99
# ---------------------------------------------------------------------------

@dataclass
class TabularDataset:
    """
    Encoded tabular data.

    Attributes:
        features (np.ndarray): N x d float32 in [0, 1]
        labels (np.ndarray): N binary anomaly indicators
        schema (list): Column name of every feature
        train_index (np.ndarray): Row indices of the training split
        test_index (np.ndarray): Row indices of the test split
        rows_read (int): Data rows found in the source
        malformed_rows (int): Rows skipped as malformed
    """
    features: np.ndarray
    labels: np.ndarray
    schema: list
    train_index: np.ndarray
    test_index: np.ndarray
    rows_read: int = 0
    malformed_rows: int = 0
    split_seed: int = 0

    @property
    def train(self):
        return self.features[self.train_index], self.labels[self.train_index]

    @property
    def test(self):
        return self.features[self.test_index], self.labels[self.test_index]


def download_kdd99(cache_dir='data', url=KDD99_URL, timeout=60):
    """
    Fetch the KDD99 10% file into a local cache.

    Args:
        cache_dir (str, optional): Cache directory. Defaults to 'data'.
        url (str, optional): Source URL
        timeout (int, optional): HTTP timeout in seconds

    Returns:
        Path: Path to the cached (gzipped) file

    Raises:
        IngestionError: If the download fails
    """
    path = Path(cache_dir) / KDD99_FILE
    if path.exists():
        logger.info(f"Using cached KDD99 data: {path}")
        return path

    logger.info(f"Downloading KDD99 data (not in cache) from {url}")
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        response = requests.get(url, stream=True, timeout=timeout)
    except requests.RequestException as e:
        raise IngestionError(f"Error downloading KDD99 data: {e}")
    if response.status_code != 200:
        raise IngestionError(f"Error downloading KDD99 data: HTTP {response.status_code}")
    tmp = path.with_suffix('.part')
    with open(tmp, 'wb') as f:
        shutil.copyfileobj(response.raw, f)
    tmp.replace(path)
    return path


def one_hot_encode(frame, columns):
    """
    Replace categorical columns by 0/1 indicator columns.

    Indicator columns are named '<column>=<category>' and sorted by category
    so the encoding is independent of row order.
    """
    parts = []
    for column in frame.columns:
        if column in columns:
            categories = sorted(frame[column].astype(str).unique())
            dummies = pd.get_dummies(pd.Categorical(frame[column].astype(str), categories=categories), dtype=np.float64)
            dummies.columns = [f"{column}={c}" for c in categories]
            dummies.index = frame.index
            parts.append(dummies)
        else:
            parts.append(frame[[column]].astype(np.float64))
    return pd.concat(parts, axis=1)


def min_max_normalize(values, minimum=None, maximum=None):
    """
    Scale each column to [0, 1] using the given (or observed) range.

    Constant columns map to 0. Values outside the fitted range are clipped.

    Returns:
        tuple: (normalized array, minimum, maximum)
    """
    values = np.asarray(values, dtype=np.float64)
    minimum = values.min(axis=0) if minimum is None else minimum
    maximum = values.max(axis=0) if maximum is None else maximum
    span = maximum - minimum
    scaled = np.where(span > 0, (values - minimum) / np.where(span > 0, span, 1.0), 0.0)
    return np.clip(scaled, 0.0, 1.0), minimum, maximum


def load_kdd99(path, convention='normal_is_anomaly', seed=0, test_fraction=0.5):
    """
    Ingest the KDD99 10% file (plain or gzipped).

    Args:
        path (str or Path): Raw data file
        convention (str, optional): Which class is the anomaly:
            'normal_is_anomaly' (records labelled normal, ~20%) or
            'attack_is_anomaly'
        seed (int, optional): Split seed. Defaults to 0.
        test_fraction (float, optional): Fraction of rows in the test split

    Returns:
        TabularDataset: Encoded and split dataset

    Raises:
        IngestionError: If the file is missing or more than 0.1% of rows are malformed
    """
    if convention not in KDD99_CONVENTIONS:
        raise ConfigurationError(f"Unknown KDD99 convention '{convention}', expected one of {KDD99_CONVENTIONS}")
    if not 0 < test_fraction < 1:
        raise ConfigurationError(f"test_fraction must be in (0, 1), got {test_fraction}")
    path = Path(path) if path else None
    if path is None or not path.exists():
        raise IngestionError(f"KDD99 source not found: {path}")

    bad_lines = []

    def skip_bad_line(line):
        bad_lines.append(line)
        return None

    frame = pd.read_csv(path, header=None, names=KDD99_COLUMNS, dtype=str, engine='python',
                        on_bad_lines=skip_bad_line, compression='infer')
    numeric = [c for c in KDD99_COLUMNS if c not in KDD99_CATEGORICAL and c != 'label']
    for column in numeric:
        frame[column] = pd.to_numeric(frame[column], errors='coerce')
    valid = frame.notna().all(axis=1)
    rows_read = len(frame) + len(bad_lines)
    malformed = int((~valid).sum()) + len(bad_lines)
    logger.info(f"Read {rows_read} KDD99 rows from {path} ({malformed} malformed)")
    if malformed:
        logger.warning(f"Skipped {malformed} malformed KDD99 rows")
    if rows_read == 0 or malformed / rows_read > MAX_MALFORMED_FRACTION:
        raise IngestionError(f"Too many malformed KDD99 rows: {malformed} of {rows_read} "
                             f"(limit {MAX_MALFORMED_FRACTION:.1%})")
    frame = frame[valid].reset_index(drop=True)

    is_normal = frame['label'].str.strip().str.rstrip('.') == 'normal'
    labels = (is_normal if convention == 'normal_is_anomaly' else ~is_normal).to_numpy().astype(np.int64)
    encoded = one_hot_encode(frame.drop(columns=['label']), KDD99_CATEGORICAL)

    order = np.random.default_rng(seed).permutation(len(frame))
    n_test = int(round(test_fraction * len(frame)))
    test_index, train_index = np.sort(order[:n_test]), np.sort(order[n_test:])

    values = encoded.to_numpy()
    _, minimum, maximum = min_max_normalize(values[train_index])
    features, _, _ = min_max_normalize(values, minimum, maximum)
    logger.info(f"KDD99: {features.shape[1]} features, {labels.mean():.1%} anomalies, "
                f"{len(train_index)} train / {len(test_index)} test rows")
    return TabularDataset(
        features=features.astype(np.float32), labels=labels, schema=list(encoded.columns),
        train_index=train_index, test_index=test_index,
        rows_read=rows_read, malformed_rows=malformed, split_seed=int(seed),
    )


# ---------------------------------------------------------------------------
# Dispatch from configuration
# ---------------------------------------------------------------------------

@dataclass
class DatasetBundle:
    """Training data plus whatever the evaluation commands need."""
    train: object
    data_shape: tuple
    synthetic_spec: Synthetic2DSpec = None
    stacked: StackedMNISTArchive = None
    mnist: dict = None
    test_x: torch.Tensor = None
    test_labels: np.ndarray = None
    sha256: str = None


def array_sha256(*arrays):
    """sha256 over dtype, shape and raw bytes of each array, in order."""
    digest = hashlib.sha256()
    for values in arrays:
        values = np.ascontiguousarray(torch.as_tensor(values).cpu().numpy())
        digest.update(f"{values.dtype}{values.shape}".encode('utf-8'))
        digest.update(values.tobytes())
    return digest.hexdigest()


def build_dataset(config):
    """
    Build the dataset named by the `data` config section.

    Every bundle carries the sha256 of the arrays it was built from.

    Returns:
        DatasetBundle: Training dataset and evaluation extras
    """
    data = config['data']
    seed = int(config['run']['seed'])
    kind = data['kind']

    if kind == 'synthetic2d':
        spec = Synthetic2DSpec.from_config(data)
        samples = synthetic2d(spec, data['train_count'], run_streams(seed)['build'])
        return DatasetBundle(train=ArrayDataset(samples), data_shape=(2,), synthetic_spec=spec,
                             sha256=array_sha256(samples))

    if kind == 'stacked_mnist':
        mnist = load_mnist(data['mnist_path'])
        spec = StackedMNISTSpec(int(data['stacks']), int(data['train_count']), int(data['eval_count']))
        archive = build_stacked_mnist(spec, mnist['y_train'], seed, data.get('archive_dir'))
        train = StackedMNISTDataset(mnist['x_train'], archive.train_indices)
        return DatasetBundle(train=train, data_shape=(spec.stacks, 28, 28), stacked=archive, mnist=mnist,
                             sha256=archive.manifest['sha256'])

    if kind == 'kdd99':
        path = data['kdd99_path'] or download_kdd99(data.get('archive_dir') or 'data')
        table = load_kdd99(path, data['contamination_convention'], seed, data['test_fraction'])
        train_x, train_y = table.train
        if data.get('train_on_normal_only', True):
            train_x = train_x[train_y == 0]
        test_x, test_y = table.test
        return DatasetBundle(train=ArrayDataset(torch.as_tensor(train_x)), data_shape=(train_x.shape[1],),
                             test_x=torch.as_tensor(test_x), test_labels=test_y,
                             sha256=array_sha256(train_x, test_x, test_y))

    if kind == 'mnist_heldout':
        mnist = load_mnist(data['mnist_path'])
        split = mnist_heldout_digit(mnist, int(data['heldout_digit']))
        return DatasetBundle(train=ArrayDataset(split.train_x), data_shape=(1, 28, 28), mnist=mnist,
                             test_x=split.test_x, test_labels=split.test_labels,
                             sha256=array_sha256(split.train_x, split.test_x, split.test_labels))

    raise ConfigurationError(f"Unknown data kind '{kind}'")
