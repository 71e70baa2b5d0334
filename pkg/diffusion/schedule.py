import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from config.interfaces import ArgumentError, ConfigurationError
from config.sections import ScheduleConfig

logger = logging.getLogger("diffcap.schedule")

COSINE_OFFSET = 0.008
COSINE_MAX_BETA = 0.999


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """
    Noise schedule tables. Timesteps are 1-based; t = 0 is clean data.

    Arguments:
        kind: "linear" or "cosine".
        T: total number of diffusion steps.
        betas, alphas, alpha_bars: float64 arrays of length T, entry t-1 holds step t.
        step_subset: strictly increasing timesteps in [1, T] ending at T.
    """
    kind: str
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    step_subset: tuple[int, ...]
    _tables: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for arr in (self.betas, self.alphas, self.alpha_bars):
            arr.setflags(write=False)
        # Index 0 holds t = 0 (alpha_bar = 1). 1 - alpha_bar at t = 1 is beta_1 itself,
        # so the t = 1 posterior collapses to x0 without cancellation error.
        alpha_bars_ext = np.concatenate([[1.0], self.alpha_bars])
        one_minus_ext = np.concatenate([[0.0, self.betas[0]], 1.0 - self.alpha_bars[1:]])
        self._tables["alpha_bars"] = torch.from_numpy(alpha_bars_ext)
        self._tables["one_minus_alpha_bars"] = torch.from_numpy(one_minus_ext)
        self._tables["betas"] = torch.from_numpy(np.concatenate([[0.0], self.betas]))
        self._tables["alphas"] = torch.from_numpy(np.concatenate([[1.0], self.alphas]))

    def beta(self, t: int) -> float:
        self.check_timestep(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self.check_timestep(t)
        return float(self.alpha_bars[t - 1])

    def one_minus_alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ArgumentError(f"timestep {t} outside [0, {self.T}]")
        return float(self._tables["one_minus_alpha_bars"][t])

    def check_timestep(self, t, allow_zero: bool = False):
        low = 0 if allow_zero else 1
        if isinstance(t, torch.Tensor):
            if t.numel() and (int(t.min()) < low or int(t.max()) > self.T):
                raise ArgumentError(f"timesteps outside [{low}, {self.T}]: {t.tolist()}")
        elif not low <= int(t) <= self.T:
            raise ArgumentError(f"timestep {t} outside [{low}, {self.T}]")

    def table(self, name: str, t, like: torch.Tensor) -> torch.Tensor:
        """
        Look up a per-timestep coefficient broadcastable against `like`.

        Args:
            name: one of alpha_bars, one_minus_alpha_bars, betas, alphas
            t: int or LongTensor of shape (B,) matching like's leading dim
            like: tensor whose dtype/device and rank the result follows

        Returns:
            Tensor: coefficient with trailing singleton dims
        """
        values = self._tables[name]
        if not isinstance(t, torch.Tensor):
            return values[int(t)].to(dtype=like.dtype, device=like.device)
        out = values.to(like.device)[t.long().to(like.device)].to(like.dtype)
        return out.reshape(*t.shape, *((1,) * (like.dim() - t.dim())))


def make_step_subset(schedule: NoiseSchedule, count: int) -> list[int]:
    """Evenly spaced timesteps ending at T, stride T/count rounded half up."""
    if count < 1:
        raise ConfigurationError("schedule.subset_count", f"must be >= 1, got {count}")
    if count > schedule.T:
        raise ConfigurationError("schedule.subset_count", f"{count} exceeds T = {schedule.T}")
    stride = schedule.T / count
    return [int(math.floor(stride * i + 0.5)) for i in range(1, count + 1)]


def _linear_betas(T: int, beta_start: float, beta_end: float) -> np.ndarray:
    if not 0.0 < beta_start < 1.0:
        raise ConfigurationError("schedule.beta_start", f"must lie in (0, 1), got {beta_start}")
    if not 0.0 < beta_end < 1.0:
        raise ConfigurationError("schedule.beta_end", f"must lie in (0, 1), got {beta_end}")
    if beta_start > beta_end:
        raise ConfigurationError("schedule.beta_start", f"{beta_start} exceeds beta_end {beta_end}")
    return np.linspace(beta_start, beta_end, T, dtype=np.float64)


def _cosine_betas(T: int) -> np.ndarray:
    def f(t):
        return math.cos((t / T + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2

    return np.array(
        [min(1.0 - f(t) / f(t - 1), COSINE_MAX_BETA) for t in range(1, T + 1)],
        dtype=np.float64,
    )


def build_schedule(kind: str, T: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                   subset_count: int = None) -> NoiseSchedule:
    """
    Build the beta / alpha / alpha-bar tables and the accelerated step subset.

    Args:
        kind: "linear" (evenly spaced betas, endpoints inclusive) or "cosine"
        T: number of diffusion steps
        beta_start: first linear beta, ignored by cosine
        beta_end: last linear beta, ignored by cosine
        subset_count: size of the step subset, defaults to T

    Returns:
        NoiseSchedule: immutable schedule
    """
    if T < 1:
        raise ConfigurationError("schedule.T", f"must be >= 1, got {T}")
    if kind == "linear":
        betas = _linear_betas(T, beta_start, beta_end)
    elif kind == "cosine":
        betas = _cosine_betas(T)
    else:
        raise ConfigurationError("schedule.kind", f"unknown schedule kind {kind!r}")

    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    schedule = NoiseSchedule(kind=kind, T=T, betas=betas, alphas=alphas,
                             alpha_bars=alpha_bars, step_subset=())
    subset = make_step_subset(schedule, T if subset_count is None else subset_count)
    object.__setattr__(schedule, "step_subset", tuple(subset))
    logger.debug(f"Built {kind} schedule: T={T}, alpha_bar_T={alpha_bars[-1]:.3e}, subset={len(subset)}")
    return schedule


def schedule_from_config(cfg: ScheduleConfig) -> NoiseSchedule:
    return build_schedule(cfg.kind, cfg.T, cfg.beta_start, cfg.beta_end, cfg.subset_count)
