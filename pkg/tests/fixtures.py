"""Constructed inputs shared by unit and acceptance tests."""

import math

import numpy as np
import torch


def monotonicity_fixture(correlation: float, dim: int = 16, seed: int = 0):
    """Equal-norm, non-parallel stream sums with the given non-negative cosine.

    Returned as (sa_t, sa_r, ca_t, ca_r) so the sums are ``sa + ca`` per stream.
    """
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    v = rng.standard_normal(dim)
    v -= (v @ u) * u
    v /= np.linalg.norm(v)
    s_t = u
    s_r = correlation * u + math.sqrt(1 - correlation ** 2) * v
    split = rng.random(dim)
    as_map = lambda a: torch.tensor(a, dtype=torch.float64).view(1, dim, 1, 1)
    return (as_map(split * s_t), as_map(split * s_r), as_map((1 - split) * s_t), as_map((1 - split) * s_r))


def cosine(a, b):
    a, b = a.flatten(), b.flatten()
    return float(a @ b / (a.norm() * b.norm()))
