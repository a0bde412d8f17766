"""Learning-rate schedules: optional linear warm-up, then constant, linear or cosine decay."""

import math
from enum import StrEnum


class Schedule(StrEnum):
    CONSTANT = "constant"
    LINEAR = "linear"
    COSINE = "cosine"


def schedule_lr(
    schedule: Schedule, base_lr: float, step: int, total_steps: int, warmup_steps: int = 0
) -> float:
    """Learning rate for the 0-based ``step`` of a ``total_steps`` run.

    Warm-up ramps to ``base_lr`` over ``warmup_steps`` steps; decay then runs
    over the remaining steps and reaches zero one step past the end.
    """
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    decay_steps = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / decay_steps)
    match schedule:
        case Schedule.CONSTANT:
            return base_lr
        case Schedule.LINEAR:
            return base_lr * (1.0 - progress)
        case Schedule.COSINE:
            return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
