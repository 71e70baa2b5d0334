import logging
import math

from config.interfaces import ArgumentError
from config.sections import TrainingConfig

logger = logging.getLogger("diffcap.training")


def lr_at(step: int, total_steps: int, cfg: TrainingConfig) -> float:
    """
    Learning rate at `step` of `total_steps`, annealed from lr_start to lr_end.

    Args:
        step: current optimizer step, 0-based
        total_steps: steps in the whole run
        cfg: training config providing lr_kind, lr_start, lr_end

    Returns:
        float: learning rate
    """
    if total_steps <= 0 or cfg.lr_kind == "constant":
        return cfg.lr_start
    if not 0 <= step <= total_steps:
        raise ArgumentError(f"step {step} outside [0, {total_steps}]")
    frac = step / total_steps
    start, end = cfg.lr_start, cfg.lr_end
    if cfg.lr_kind == "linear":
        return start + (end - start) * frac
    if cfg.lr_kind == "cosine":
        return end + (start - end) * (1 + math.cos(math.pi * frac)) / 2
    if cfg.lr_kind == "log":
        return start * (end / start) ** frac
    raise ArgumentError(f"unknown lr_kind {cfg.lr_kind!r}")


def lambda_at(l_simple_prime: float, l_r: float, cfg: TrainingConfig) -> float:
    """Rounding-term weight: fixed, or L_simple'/L_R * C from the previous step's losses."""
    if cfg.lambda_kind == "constant":
        return cfg.lambda_value
    if l_r <= 0:
        logger.warning(f"L_R = {l_r} in dynamic lambda mode, falling back to {cfg.lambda_value}")
        return cfg.lambda_value
    return l_simple_prime / l_r * cfg.dynamic_C
