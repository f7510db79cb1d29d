"""Laplace-mechanism uploads and per-client privacy budget accounting.

Each client clips its update to L2 norm ``C``, adds i.i.d. Laplace noise of
scale ``b = (2C/|D|) / eps`` to every coordinate, and charges ``eps`` to its
accountant.  Budgets compose additively over rounds.  Under the ``dynamic``
strategy a round lost to a communication failure is not charged and its
budget is spread evenly over the rounds still to come.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STRATEGIES = ("fixed", "dynamic")


class BudgetError(ValueError):
    pass


def clip(delta: np.ndarray, clip_threshold: float) -> np.ndarray:
    if clip_threshold <= 0:
        raise ValueError(f"clip threshold must be positive, got {clip_threshold}")
    return delta / max(1.0, float(np.linalg.norm(delta)) / clip_threshold)


def sensitivity(clip_threshold: float, dataset_size: int) -> float:
    if dataset_size < 1:
        raise ValueError(f"dataset size must be >= 1, got {dataset_size}")
    return 2.0 * clip_threshold / dataset_size


@dataclass(frozen=True)
class NoiseParams:
    clip_threshold: float
    sensitivity: float
    epsilon: float

    @classmethod
    def for_client(cls, clip_threshold: float, dataset_size: int, epsilon: float) -> NoiseParams:
        return cls(clip_threshold, sensitivity(clip_threshold, dataset_size), epsilon)

    @property
    def scale(self) -> float:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        return 0.0 if math.isinf(self.epsilon) else self.sensitivity / self.epsilon


def laplace_from_uniform(u: np.ndarray, scale: float) -> np.ndarray:
    """Inverse-CDF transform of uniforms in [0, 1) to Laplace(0, scale)."""
    c = u - 0.5
    # 1 - 2|c| hits 0 only for u == 0; keep the log finite
    tail = np.maximum(1.0 - 2.0 * np.abs(c), np.finfo(float).tiny)
    return -scale * np.sign(c) * np.log(tail)


def laplace_noise(size: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    return laplace_from_uniform(rng.random(size), scale)


def add_noise(delta: np.ndarray, params: NoiseParams, rng: np.random.Generator) -> np.ndarray:
    b = params.scale
    if b == 0.0:
        return delta.copy()
    return delta + laplace_noise(delta.shape[0], b, rng)


class PrivacyAccountant:
    """Per-round budget ledger for one client over ``rounds_total`` rounds."""

    def __init__(self, epsilon: float, rounds_total: int, strategy: str = "dynamic"):
        if epsilon <= 0:
            raise BudgetError(f"initial budget must be positive, got {epsilon}")
        if rounds_total < 1:
            raise BudgetError(f"rounds_total must be >= 1, got {rounds_total}")
        if strategy not in STRATEGIES:
            raise BudgetError(f"unknown budget strategy {strategy!r}")
        self.epsilon_initial = epsilon
        self.epsilon_current = epsilon
        self.rounds_total = rounds_total
        self.rounds_elapsed = 0
        self.consumed = 0.0
        self.strategy = strategy
        self.history: list[tuple[int, bool, float]] = []

    @property
    def total_budget(self) -> float:
        return self.rounds_total * self.epsilon_initial

    @property
    def rounds_remaining(self) -> int:
        return self.rounds_total - self.rounds_elapsed

    def reallocate_on_failure(self, failed_round: int) -> None:
        """Spread the budget of 1-based round ``failed_round`` over later rounds.

        eps <- eps * (R - r + 1) / (R - r).  A failure in the last round has
        no later rounds to absorb it, so the budget is left unspent.
        """
        R = self.rounds_total
        if not 1 <= failed_round <= R:
            raise BudgetError(f"failed round {failed_round} outside 1..{R}")
        if failed_round < R:
            self.epsilon_current *= (R - failed_round + 1) / (R - failed_round)

    def consume(self, succeeded: bool) -> float:
        """Close out the next round; returns the budget charged (0 on failure)."""
        if self.rounds_elapsed >= self.rounds_total:
            raise BudgetError("all rounds already accounted for")
        r = self.rounds_elapsed + 1
        charged = 0.0
        if succeeded:
            charged = self.epsilon_current
            self.consumed += charged
        elif self.strategy == "dynamic":
            self.reallocate_on_failure(r)
        self.rounds_elapsed = r
        self.history.append((r, succeeded, charged))
        return charged
