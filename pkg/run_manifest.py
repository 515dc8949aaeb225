#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Run Manifest Module

Every CLI command runs inside a fresh run directory that ends up holding a
manifest.json: the effective configuration, seed, code identity, start and
end timestamps and every artifact with its sha256. A run that fails leaves
a FAILED marker with the error message instead of a completed manifest.
"""

import hashlib
import json
import logging
import subprocess
from dataclasses import dataclass, asdict, field
from datetime import datetime, timezone
from pathlib import Path

# Set up logging
logger = logging.getLogger(__name__)

MANIFEST_FILE = 'manifest.json'
FAILED_MARKER = 'FAILED'
SOURCE_ROOT = Path(__file__).resolve().parent


def file_sha256(path, chunk_size=1 << 20):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b''):
            digest.update(chunk)
    return digest.hexdigest()


def git_blob_hash(data):
    """sha1 of a git blob object holding `data`."""
    return hashlib.sha1(b'blob %d\0' % len(data) + data).hexdigest()


def code_identity(root=SOURCE_ROOT):
    """
    Identify the code that produced a run.

    The git commit when the sources are a git checkout (suffixed '-dirty'
    with uncommitted changes), otherwise a hash over the git blob hashes of
    every Python source and config file.
    """
    try:
        commit = subprocess.run(['git', 'rev-parse', 'HEAD'], cwd=root, capture_output=True,
                                text=True, timeout=10, check=True).stdout.strip()
        status = subprocess.run(['git', 'status', '--porcelain'], cwd=root, capture_output=True,
                                text=True, timeout=10, check=True).stdout.strip()
        return f"git:{commit}{'-dirty' if status else ''}"
    except (OSError, subprocess.SubprocessError):
        logger.debug("git unavailable, hashing the source tree instead")

    digest = hashlib.sha1()
    files = sorted(list(root.glob('*.py')) + list(root.glob('config/**/*.yaml')))
    for path in files:
        digest.update(f"{path.relative_to(root).as_posix()} {git_blob_hash(path.read_bytes())}\n".encode('utf-8'))
    return f"tree:{digest.hexdigest()}"


def _now():
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


def create_run_dir(config, command):
    """
    Fresh directory <output_root>/<run name>/<command>-<timestamp>[-n].

    Returns:
        Path: The created directory
    """
    run = config['run']
    base = Path(run['output_root']) / run['name']
    stamp = datetime.now().strftime('%Y%m%d-%H%M%S')
    candidate = base / f"{command}-{stamp}"
    n = 1
    while candidate.exists():
        candidate = base / f"{command}-{stamp}-{n}"
        n += 1
    candidate.mkdir(parents=True)
    return candidate


@dataclass
class RunManifest:
    """Provenance record of one command invocation."""
    command: str
    config: dict
    seed: int
    code_identity: str = field(default_factory=code_identity)
    started_at: str = field(default_factory=_now)
    finished_at: str = None
    status: str = 'running'
    artifacts: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add_artifact(self, path, run_dir):
        """Record a produced file with its checksum."""
        path = Path(path)
        self.artifacts.append({
            'path': path.relative_to(run_dir).as_posix() if path.is_relative_to(run_dir) else str(path),
            'sha256': file_sha256(path),
            'bytes': path.stat().st_size,
        })

    def collect(self, run_dir):
        """Record every file under the run directory (except the manifest itself)."""
        run_dir = Path(run_dir)
        self.artifacts = []
        for path in sorted(p for p in run_dir.rglob('*') if p.is_file()):
            if path.name in (MANIFEST_FILE, FAILED_MARKER) or path.suffix == '.tmp':
                continue
            self.add_artifact(path, run_dir)

    def finish(self, run_dir, summary=None):
        """Inventory the artifacts and write the manifest."""
        self.summary.update(summary or {})
        self.finished_at = _now()
        self.status = 'completed'
        self.collect(run_dir)
        return self.write(run_dir)

    def fail(self, run_dir, error):
        """Leave a FAILED marker and a manifest with the partial inventory."""
        run_dir = Path(run_dir)
        (run_dir / FAILED_MARKER).write_text(f"{type(error).__name__}: {error}\n")
        self.finished_at = _now()
        self.status = 'failed'
        self.summary['error'] = f"{type(error).__name__}: {error}"
        self.collect(run_dir)
        return self.write(run_dir)

    def write(self, run_dir):
        path = Path(run_dir) / MANIFEST_FILE
        path.write_text(json.dumps(asdict(self), indent=2, default=str))
        return path


def read_manifest(run_dir):
    return json.loads((Path(run_dir) / MANIFEST_FILE).read_text())


def verify_artifacts(run_dir):
    """Paths whose current checksum differs from the manifest."""
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    return [a['path'] for a in manifest['artifacts'] if file_sha256(run_dir / a['path']) != a['sha256']]
