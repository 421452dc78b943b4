"""Named random substreams derived from a single experiment seed."""

from __future__ import annotations

import contextlib
import hashlib

import numpy as np
import torch


def substream_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def numpy_rng(seed: int, name: str, *counter: int) -> np.random.Generator:
    """Counter-based numpy generator: the same (seed, name, counter) always
    yields the same stream, independent of call order."""
    return np.random.default_rng([substream_seed(seed, name), *counter])


def torch_generator(seed: int, name: str) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(substream_seed(seed, name))
    return g


@contextlib.contextmanager
def torch_seeded(seed: int, name: str = "init"):
    """Run a block (typically module construction) under a fixed global torch
    seed without disturbing the caller's RNG state."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(substream_seed(seed, name))
        yield
