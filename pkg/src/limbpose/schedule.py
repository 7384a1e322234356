"""Epoch-dependent weight for the structure loss."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

SCHEMES = ('constant', 'step', 'linear', 'exponential')


@dataclass(frozen=True)
class ScheduleSpec:
    """One weighting curve.

    ``rate`` only matters for ``exponential``; larger values bend the curve
    harder toward the end of training.
    """
    scheme: str = 'step'
    lambda_max: float = 1e-4
    total_epochs: int = 210
    step_epoch: int = 139
    rate: float = 5.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f'unknown scheme {self.scheme!r}; expected one of {SCHEMES}')
        if self.lambda_max < 0:
            raise ValueError('lambda_max must be non-negative')
        if self.total_epochs <= 0:
            raise ValueError('total_epochs must be positive')
        if self.scheme == 'step' and not 0 <= self.step_epoch <= self.total_epochs:
            raise ValueError('step_epoch must lie in [0, total_epochs]')
        if self.scheme == 'exponential' and not self.rate > 0:
            raise ValueError('rate must be positive')


def lambda_at(spec: ScheduleSpec, epoch: float) -> float:
    """Weight at ``epoch``; fractional epochs are accepted for plotting."""
    if not 0 <= epoch <= spec.total_epochs:
        raise ValueError(f'epoch {epoch} outside [0, {spec.total_epochs}]')
    if spec.scheme == 'constant':
        return spec.lambda_max
    if spec.scheme == 'step':
        return 0.0 if epoch < spec.step_epoch else spec.lambda_max
    if spec.scheme == 'linear':
        return spec.lambda_max * epoch / spec.total_epochs
    # pinned at 0 and lambda_max; expm1 keeps small epochs accurate
    return spec.lambda_max * math.expm1(spec.rate * epoch / spec.total_epochs) / math.expm1(spec.rate)


def schedule_table(spec: ScheduleSpec) -> List[Tuple[int, float]]:
    return [(e, lambda_at(spec, e)) for e in range(spec.total_epochs + 1)]
