"""Seeded per-round client communication failures."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DROPOUT_MODES = ("uniform_count", "fixed_count")

# spawn-key tag separating availability draws from training streams
_AVAILABILITY_TAG = 7


def max_unavailable(num_clients: int, dropout_ratio: float) -> int:
    """n_f = round(n_c * N), halves rounded up."""
    return int(math.floor(dropout_ratio * num_clients + 0.5))


def draw_unavailable(
    round_index: int,
    num_clients: int,
    dropout_ratio: float,
    seed: int,
    mode: str = "uniform_count",
) -> frozenset[int]:
    """Unavailable client ids for one round.

    ``uniform_count`` draws the failure count uniformly from ``0..n_f``;
    ``fixed_count`` always fails exactly ``n_f`` clients.  The chosen clients
    are a uniform sample without replacement.  The draw depends only on
    ``(seed, round_index)``.
    """
    if not 0.0 <= dropout_ratio <= 1.0:
        raise ValueError(f"dropout ratio must lie in [0, 1], got {dropout_ratio}")
    if mode not in DROPOUT_MODES:
        raise ValueError(f"unknown dropout mode {mode!r}")
    n_f = max_unavailable(num_clients, dropout_ratio)
    if n_f == 0:
        return frozenset()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_AVAILABILITY_TAG, round_index)))
    k = int(rng.integers(0, n_f + 1)) if mode == "uniform_count" else n_f
    return frozenset(int(i) for i in rng.choice(num_clients, size=k, replace=False))


@dataclass(frozen=True)
class AvailabilityPlan:
    num_clients: int
    unavailable: tuple[frozenset[int], ...]

    @classmethod
    def draw(cls, rounds, num_clients, dropout_ratio, seed, mode="uniform_count"):
        return cls(
            num_clients,
            tuple(draw_unavailable(r, num_clients, dropout_ratio, seed, mode) for r in range(rounds)),
        )

    def available(self, round_index: int) -> frozenset[int]:
        return frozenset(range(self.num_clients)) - self.unavailable[round_index]
