"""Deterministic RNG derivation.

Every stochastic component draws from a generator keyed by
(global seed, stream name, counters), so any iteration of a long run can be
reproduced in isolation and a resumed run continues bit-identically.
"""

import hashlib

import numpy as np
import torch


def derive_seed(global_seed: int, *stream) -> int:
    """Hash (global_seed, *stream) into a 64-bit seed."""
    key = repr((int(global_seed),) + tuple(stream)).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little")


def numpy_rng(global_seed: int, *stream) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(global_seed, *stream)))


def torch_generator(global_seed: int, *stream) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(global_seed, *stream) & 0x7FFFFFFFFFFFFFFF)
    return gen
