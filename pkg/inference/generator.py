import logging
import math
from dataclasses import dataclass
from typing import Optional

import torch

from config.interfaces import ConfigurationError
from config.sections import RunConfig
from data.batches import conditions_for
from data.dataset import CaptionRecord, FeatureFile
from denoiser.model import CondFeatures, Denoiser
from diffusion.core import LatentSeq, predict_x0_from_xprev, sample_forward
from diffusion.schedule import NoiseSchedule
from textcodec.codec import argmax_ids, decode_argmax, dedup_consecutive
from textcodec.vocab import Vocab

logger = logging.getLogger("diffcap.inference")


@dataclass(frozen=True)
class GenConfig:
    stages: int = 5
    deterministic: bool = True
    w: float = 0.0
    dedup: bool = True
    reembed_between_stages: bool = False
    seed: int = 0

    @classmethod
    def from_config(cls, config: RunConfig) -> "GenConfig":
        infer = config.infer
        return cls(
            stages=infer.stages,
            deterministic=infer.deterministic,
            w=config.guidance.w if config.guidance.enabled else 0.0,
            dedup=infer.dedup,
            reembed_between_stages=infer.reembed_between_stages,
            seed=infer.seed,
        )


def stage_timesteps(schedule: NoiseSchedule, stages: int) -> list[int]:
    """Descending timesteps evenly spaced over the step subset, starting at T."""
    subset = schedule.step_subset
    if not 1 <= stages <= len(subset):
        raise ConfigurationError("infer.stages", f"must lie in [1, {len(subset)}], got {stages}")
    stride = len(subset) / stages
    picked = [subset[int(math.floor(stride * k + 0.5)) - 1] for k in range(1, stages + 1)]
    return picked[::-1]


class CaptionGenerator:
    """
    Iterative refinement: start from Gaussian x_T, predict x0 at each stage timestep,
    re-noise the prediction to the next stage, decode the last prediction.
    """

    def __init__(self, model: Denoiser, schedule: NoiseSchedule, vocab: Vocab, config: RunConfig,
                 gen: GenConfig = None):
        self.model = model
        self.schedule = schedule
        self.vocab = vocab
        self.config = config
        self.gen = gen or GenConfig.from_config(config)
        self.stages = stage_timesteps(schedule, self.gen.stages)

    def refine(self, cond: CondFeatures, generator: torch.Generator) -> torch.Tensor:
        """
        Run every stage for a batch of conditions.

        Args:
            cond: batched condition features
            generator: draws x_T and, in stochastic mode, the re-noising noise

        Returns:
            Tensor: final x0 prediction, (B, L, D_word)
        """
        param = next(self.model.parameters())
        diffusion = self.config.diffusion
        batch = cond.image_vec.shape[0]
        shape = (batch, self.model.config.max_len, self.model.config.d_word)
        x = torch.randn(shape, generator=generator, dtype=param.dtype).to(param.device)

        x0_hat = x
        for i, t in enumerate(self.stages):
            steps = torch.full((batch,), t, dtype=torch.long, device=param.device)
            pred = self.model.guided_forward(x, steps, cond, self.gen.w)
            if diffusion.mode == "x0":
                x0_hat = pred
            else:
                prev = (steps - diffusion.n).clamp(min=0)
                x0_hat = predict_x0_from_xprev(x, pred, steps, prev, self.schedule, diffusion.noise_coeff)
            if self.gen.reembed_between_stages:
                x0_hat = self.model.embedding(argmax_ids(x0_hat, self.model.embedding))
            if i + 1 == len(self.stages):
                break
            if self.gen.deterministic:
                eps = torch.zeros_like(x0_hat)
            else:
                eps = torch.randn(shape, generator=generator, dtype=param.dtype).to(param.device)
            x = sample_forward(LatentSeq(values=x0_hat, t=0), self.stages[i + 1], eps,
                               self.schedule, diffusion.noise_coeff).check_finite().values
        LatentSeq(values=x0_hat, t=0).check_finite()
        return x0_hat

    @torch.no_grad()
    def generate_batch(self, cond: CondFeatures, seed: Optional[int] = None) -> list[str]:
        self.model.eval()
        generator = torch.Generator().manual_seed(self.gen.seed if seed is None else seed)
        x0_hat = self.refine(cond, generator)
        captions = []
        for row in x0_hat:
            words = decode_argmax(row, self.model.embedding, self.vocab)
            if self.gen.dedup:
                words = dedup_consecutive(words)
            captions.append(" ".join(words))
        return captions

    def generate(self, cond: CondFeatures, seed: Optional[int] = None) -> str:
        if not cond.batched:
            cond = CondFeatures(
                image_vec=cond.image_vec.unsqueeze(0),
                text_vec=None if cond.text_vec is None else cond.text_vec.unsqueeze(0),
                is_null=cond.null_mask(),
            )
        return self.generate_batch(cond, seed)[0]

    def caption_records(self, records: list[CaptionRecord], features: FeatureFile,
                        seed: Optional[int] = None) -> list[str]:
        if not records:
            return []
        return self.generate_batch(conditions_for(records, features), seed)
