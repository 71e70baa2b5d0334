import logging
import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from config.interfaces import ArgumentError, DivergenceError
from diffusion.schedule import NoiseSchedule

logger = logging.getLogger("diffcap.diffusion")


@dataclass
class LatentSeq:
    """
    Caption embeddings at a diffusion timestep.

    values is (L, D_word) or batched (B, L, D_word); t is an int or a (B,) LongTensor;
    pad_mask is True at real token positions.
    """
    values: torch.Tensor
    t: int | torch.Tensor
    pad_mask: Optional[torch.Tensor] = None

    def check_finite(self):
        if not torch.isfinite(self.values).all():
            raise DivergenceError(f"non-finite latent values at t={self.t}")
        return self


@dataclass(frozen=True)
class LossBreakdown:
    l_simple_prime: float
    l_r: float
    lam: float
    total: float

    def as_dict(self) -> dict:
        return {"l_simple_prime": self.l_simple_prime, "l_r": self.l_r,
                "lambda": self.lam, "total": self.total}


def _noise_scale(schedule: NoiseSchedule, t, like: torch.Tensor, noise_coeff: str) -> torch.Tensor:
    one_minus = schedule.table("one_minus_alpha_bars", t, like)
    if noise_coeff == "sqrt":
        return one_minus.sqrt()
    if noise_coeff == "linear":
        return one_minus
    raise ArgumentError(f"unknown noise_coeff {noise_coeff!r}")


def sample_forward(x0: LatentSeq, t, eps: torch.Tensor, schedule: NoiseSchedule,
                   noise_coeff: str = "sqrt") -> LatentSeq:
    """Draw x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, with eps supplied by the caller."""
    schedule.check_timestep(t)
    if eps.shape != x0.values.shape:
        raise ArgumentError(f"noise shape {tuple(eps.shape)} != latent shape {tuple(x0.values.shape)}")
    signal = schedule.table("alpha_bars", t, x0.values).sqrt()
    values = signal * x0.values + _noise_scale(schedule, t, x0.values, noise_coeff) * eps
    return LatentSeq(values=values, t=t, pad_mask=x0.pad_mask)


def posterior_mean(xt: LatentSeq, x0: LatentSeq, t, schedule: NoiseSchedule) -> torch.Tensor:
    """Mean of q(x_{t-1} | x_t, x0), with alpha_bar_0 = 1."""
    schedule.check_timestep(t)
    if xt.values.shape != x0.values.shape:
        raise ArgumentError("x_t and x0 shapes differ")
    like = x0.values
    prev = t - 1
    alpha_bar_prev = schedule.table("alpha_bars", prev, like)
    one_minus = schedule.table("one_minus_alpha_bars", t, like)
    one_minus_prev = schedule.table("one_minus_alpha_bars", prev, like)
    coef_x0 = alpha_bar_prev.sqrt() * schedule.table("betas", t, like) / one_minus
    coef_xt = schedule.table("alphas", t, like).sqrt() * one_minus_prev / one_minus
    return coef_x0 * x0.values + coef_xt * xt.values


def predict_x0_from_xprev(xt: torch.Tensor, x_prev: torch.Tensor, t: torch.Tensor, s: torch.Tensor,
                          schedule: NoiseSchedule, noise_coeff: str = "sqrt") -> torch.Tensor:
    """
    Recover x0 from x_t and a prediction of x_s (s < t) drawn with the same noise.

    Both latents share eps, so the 2x2 linear system in (x0, eps) is solved directly.
    Rows with s = 0 already hold x0.
    """
    a_t = schedule.table("alpha_bars", t, xt).sqrt()
    a_s = schedule.table("alpha_bars", s, xt).sqrt()
    b_t = _noise_scale(schedule, t, xt, noise_coeff)
    b_s = _noise_scale(schedule, s, xt, noise_coeff)
    det = a_t * b_s - a_s * b_t
    safe_det = torch.where(det == 0, torch.ones_like(det), det)
    solved = (b_s * xt - b_t * x_prev) / safe_det
    clean = (s == 0).reshape(*s.shape, *((1,) * (xt.dim() - s.dim())))
    return torch.where(clean, x_prev, solved)


def _masked_mean(values: torch.Tensor, pad_mask: Optional[torch.Tensor]) -> torch.Tensor:
    """Mean over unmasked positions (and trailing dims) per example, then over the batch."""
    if values.dim() == 2:
        values = values.unsqueeze(0)
        pad_mask = None if pad_mask is None else pad_mask.unsqueeze(0)
    per_position = values.reshape(values.shape[0], values.shape[1], -1).mean(dim=-1)
    if pad_mask is None:
        return per_position.mean()
    weights = pad_mask.to(per_position.dtype)
    counts = weights.sum(dim=1).clamp(min=1.0)
    return ((per_position * weights).sum(dim=1) / counts).mean()


def simple_prime_loss(pred: torch.Tensor, target: torch.Tensor,
                      pred1: Optional[torch.Tensor] = None, target1: Optional[torch.Tensor] = None,
                      pad_mask: Optional[torch.Tensor] = None,
                      pad_mask1: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Mean absolute error of the main prediction plus the x1-restoring pair.

    Args:
        pred, target: (B, L, D) or (L, D)
        pred1, target1: the x1-restoring pair, omitted when it is not evaluated
        pad_mask: (B, L) or (L,), True at real positions
        pad_mask1: mask for the x1 pair, defaults to pad_mask

    Returns:
        Tensor: scalar loss
    """
    if pred.shape != target.shape:
        raise ArgumentError(f"pred {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    loss = _masked_mean((pred - target).abs(), pad_mask)
    if pred1 is None and target1 is None:
        return loss
    if pred1 is None or target1 is None or pred1.shape != target1.shape:
        raise ArgumentError("x1-restoring pair is incomplete or mismatched")
    return loss + _masked_mean((pred1 - target1).abs(), pad_mask if pad_mask1 is None else pad_mask1)


def rounding_loss(pred_x0: torch.Tensor, tokens: torch.Tensor, lm_head: torch.Tensor,
                  pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Token negative log-likelihood of softmax(lm_head . x0_hat) over the whole vocab."""
    vocab_size = lm_head.shape[0]
    if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= vocab_size):
        raise ArgumentError(f"token id outside [0, {vocab_size})")
    if pred_x0.shape[:-1] != tokens.shape:
        raise ArgumentError(f"pred_x0 {tuple(pred_x0.shape)} does not match tokens {tuple(tokens.shape)}")
    logits = pred_x0 @ lm_head.T
    nll = -F.log_softmax(logits, dim=-1).gather(-1, tokens.long().unsqueeze(-1)).squeeze(-1)
    return _masked_mean(nll.unsqueeze(-1), pad_mask)


def total_loss(l_simple_prime: float, l_r: float, lam: float) -> LossBreakdown:
    values = (l_simple_prime, l_r, lam)
    if any(math.isnan(v) or math.isinf(v) for v in values):
        logger.error(f"Loss diverged: l_simple_prime={l_simple_prime}, l_r={l_r}, lambda={lam}")
        raise DivergenceError(f"non-finite loss terms {values}")
    if lam < 0:
        raise ArgumentError(f"lambda must be >= 0, got {lam}")
    return LossBreakdown(l_simple_prime=l_simple_prime, l_r=l_r, lam=lam,
                         total=l_simple_prime + lam * l_r)
