# src/ppisp/calib/schedule.py
"""Learning-rate schedule: initial delay, linear warmup, exponential decay."""

from dataclasses import dataclass


@dataclass(frozen=True)
class LrSchedule:
    """Schedule hyperparameters; defaults are the full-scale calibration values."""

    lr0: float = 0.002          # Base learning rate
    s_d: int = 0                # Delay steps (rate held at zero)
    s_w: int = 500              # Warmup steps, ramp from f_s * lr0 to lr0
    s_max: int = 30000          # Decay steps until f_f * lr0 is reached
    f_s: float = 0.01           # Warmup start factor
    f_f: float = 0.01           # Final factor after decay

    def __post_init__(self):
        if self.lr0 < 0:
            raise ValueError("lr0 must be non-negative")
        if self.s_d < 0 or self.s_w < 0 or self.s_max <= 0:
            raise ValueError("s_d and s_w must be >= 0 and s_max > 0")
        if not (0 < self.f_s <= 1) or not (0 < self.f_f <= 1):
            raise ValueError("f_s and f_f must lie in (0, 1]")


def lr_at(step: int, schedule: LrSchedule) -> float:
    """
    Learning rate at a training step.

    Args:
        step: Zero-based step index
        schedule: Schedule hyperparameters

    Returns:
        0 during the delay, a linear ramp during warmup, then
        lr0 * (f_f ** (1 / s_max)) ** (step - s_d - s_w)
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    sc = schedule
    if step < sc.s_d:
        return 0.0
    if step < sc.s_d + sc.s_w:
        return sc.lr0 * (sc.f_s + (1.0 - sc.f_s) * (step - sc.s_d) / sc.s_w)
    decay = sc.f_f ** (1.0 / sc.s_max)
    return sc.lr0 * decay ** (step - sc.s_d - sc.s_w)
