"""Named, replayable random streams.

Every stochastic choice in the pipeline draws from a generator derived
from (master seed, purpose name, indices). Streams are independent of
each other and of call order, which is what makes single-class condensing
bit-identical to the same class inside a joint run.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

_U64 = (1 << 63) - 1  # torch wants a non-negative int64 seed


def derive_seed(master: int, *names: object) -> int:
    """Map (master, name...) to a stable 63-bit seed."""
    key = repr((int(master),) + tuple(names)).encode()
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little") & _U64


def torch_gen(master: int, *names: object) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(derive_seed(master, *names))
    return g


def numpy_gen(master: int, *names: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *names))
