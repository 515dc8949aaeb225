#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Random Streams Module

All randomness flows through explicit torch.Generator objects derived from a
run seed. There is no use of the global torch or numpy RNG anywhere in the
package.
"""

import numpy as np
import torch

# Named child streams of a run seed. Order matters: appending is safe,
# reordering changes every derived stream.
STREAM_NAMES = ('init', 'data', 'train', 'sample', 'eval', 'build')


def make_generator(seed, device='cpu'):
    """
    Create a torch generator seeded deterministically.

    Args:
        seed (int or np.random.SeedSequence): Seed material
        device (str, optional): Device of the generator. Defaults to 'cpu'.

    Returns:
        torch.Generator: Seeded generator
    """
    if isinstance(seed, np.random.SeedSequence):
        seed = int(seed.generate_state(1, dtype=np.uint64)[0] & 0x7FFF_FFFF_FFFF_FFFF)
    generator = torch.Generator(device=device)
    generator.manual_seed(int(seed))
    return generator


def split_generators(seed, count, device='cpu'):
    """
    Derive `count` statistically independent generators from one seed.

    Args:
        seed (int): Parent seed
        count (int): Number of child streams
        device (str, optional): Device of the generators

    Returns:
        list: List of torch.Generator
    """
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [make_generator(child, device) for child in children]


def run_streams(seed, device='cpu'):
    """
    Named child streams for a run.

    Returns:
        dict: Mapping from each name in STREAM_NAMES to a torch.Generator
    """
    return dict(zip(STREAM_NAMES, split_generators(seed, len(STREAM_NAMES), device)))


def derive_seed(generator):
    """Draw an integer seed from a generator (for libraries that take int seeds)."""
    return int(torch.randint(0, 2**31 - 1, (1,), generator=generator).item())
