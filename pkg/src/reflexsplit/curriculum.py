"""Depth-dependent initialization and epoch-wise warmup of the separation strength."""

from __future__ import annotations

import math
from dataclasses import dataclass

FIXED_STRENGTH = 0.5


def lambda_init(level: int) -> float:
    if level < 0:
        raise ValueError(f"negative level {level}")
    return 0.8 - 0.6 * math.exp(-0.3 * level)


def lambda_warmup(epoch: int, warmup: int) -> float:
    if epoch < warmup:
        return 0.1 + 0.9 * epoch / warmup
    return 1.0


def lambda_effective(level: int, epoch: int, warmup: int) -> float:
    return lambda_init(level) * lambda_warmup(epoch, warmup)


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class Strategy:
    """How the separation strength is initialized and scaled over epochs.

    ``full`` is the depth-init plus warmup schedule; the other three are the
    training-strategy ablations.
    """

    name: str = "full"

    @property
    def learnable(self) -> bool:
        return self.name != "fixed"

    def initial_strength(self, level: int) -> float:
        if self.name in ("full", "depth_init_only"):
            return lambda_init(level)
        return FIXED_STRENGTH

    def multiplier(self, epoch: int, warmup: int) -> float:
        if self.name in ("full", "warmup_only"):
            return lambda_warmup(epoch, warmup)
        return 1.0


@dataclass(frozen=True)
class CurriculumState:
    epoch: int = 0
    warmup_epochs: int = 30
    strategy: Strategy = Strategy()

    @property
    def lambda_diff(self) -> float:
        return self.strategy.multiplier(self.epoch, self.warmup_epochs)

    def values(self, levels=range(6)) -> dict[int, float]:
        return {lvl: self.strategy.initial_strength(lvl) * self.lambda_diff for lvl in levels}

    def at_epoch(self, epoch: int) -> "CurriculumState":
        return CurriculumState(epoch, self.warmup_epochs, self.strategy)


def schedule_rows(epochs: int, warmup: int, levels=range(6)) -> list[tuple[int, int, float]]:
    return [(e, lvl, lambda_effective(lvl, e, warmup)) for e in range(epochs) for lvl in levels]
