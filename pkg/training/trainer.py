import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch
from torch.utils.data import DataLoader
from tqdm import tqdm

from config.config import CHECKPOINTS_DIR, METRICS_COLUMNS, METRICS_FILE
from config.interfaces import ArgumentError, DivergenceError
from config.sections import RunConfig
from data.batches import CaptionBatch, CaptionDataset, collate
from data.dataset import CaptionRecord, FeatureFile
from denoiser.checkpoint import save_checkpoint
from denoiser.model import Denoiser
from diffusion.core import (
    LatentSeq,
    LossBreakdown,
    posterior_mean,
    predict_x0_from_xprev,
    rounding_loss,
    sample_forward,
    simple_prime_loss,
    total_loss,
)
from diffusion.schedule import NoiseSchedule
from inference.bleu import corpus_bleu
from inference.generator import CaptionGenerator
from textcodec.vocab import Vocab, split_words
from training.schedules import lambda_at, lr_at

logger = logging.getLogger("diffcap.training")

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class FitResult:
    epochs_run: int
    best_epoch: Optional[int]
    stopped_early: bool
    checkpoint: Path
    metrics: list[dict] = field(default_factory=list)


def mean_breakdown(losses: list[LossBreakdown], lam: float) -> LossBreakdown:
    if not losses:
        return total_loss(0.0, 0.0, lam)
    l_simple = sum(b.l_simple_prime for b in losses) / len(losses)
    l_r = sum(b.l_r for b in losses) / len(losses)
    return total_loss(l_simple, l_r, lam)


class Trainer:
    """
    Owns the optimizer, RNG streams and lambda state for one training run.

    Every random draw (timesteps, noise, condition dropout, batch order) comes from
    generators seeded by training.seed, so equal configs give equal runs.
    """

    def __init__(self, model: Denoiser, schedule: NoiseSchedule, config: RunConfig, vocab: Vocab):
        self.model = model
        self.schedule = schedule
        self.config = config
        self.vocab = vocab
        self.cfg = config.training
        self.dtype = next(model.parameters()).dtype
        self.device = next(model.parameters()).device

        self.optimizer = torch.optim.AdamW(
            [p for p in model.parameters() if p.requires_grad],
            lr=self.cfg.lr_start,
            betas=ADAM_BETAS,
            eps=ADAM_EPS,
            weight_decay=self.cfg.weight_decay,
        )
        self.generator = torch.Generator().manual_seed(self.cfg.seed)
        self.subset = torch.tensor(schedule.step_subset, dtype=torch.long)
        self.step = 0
        self.epoch = 0
        self.total_steps = self.cfg.max_steps or 0
        self.lam = self.cfg.lambda_value
        self.lr = self.cfg.lr_start
        self.best_val = math.inf
        self.best_epoch = None
        self.best_state = None
        self.metrics: list[dict] = []

    def _randn(self, shape, generator: torch.Generator) -> torch.Tensor:
        return torch.randn(shape, generator=generator, dtype=self.dtype).to(self.device)

    def compute_losses(self, batch: CaptionBatch, generator: torch.Generator,
                       train: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
        """
        Draw timesteps and noise for a batch and return (L_simple', L_R) as tensors.

        Args:
            batch: token ids, masks and condition features
            generator: source of every random draw in this call
            train: applies condition dropout when guidance is enabled

        Returns:
            tuple: (L_simple' including the x1-restoring term, L_R)
        """
        diffusion = self.config.diffusion
        guidance = self.config.guidance
        tokens = batch.tokens.to(self.device)
        mask = batch.pad_mask.to(self.device)
        loss_mask = mask if self.config.loss.mask_padding else None
        size = tokens.shape[0]

        t = self.subset[torch.randint(len(self.subset), (size,), generator=generator)].to(self.device)
        x0 = LatentSeq(values=self.model.embedding(tokens), t=0, pad_mask=mask)
        eps = self._randn(x0.values.shape, generator)
        xt = sample_forward(x0, t, eps, self.schedule, diffusion.noise_coeff)

        is_null = torch.zeros(size, dtype=torch.bool)
        if train and guidance.enabled:
            is_null = torch.rand(size, generator=generator) < guidance.p_uncond
        cond = batch.condition(is_null.to(self.device), dtype=self.dtype)

        pred = self.model(xt, t, cond)
        if diffusion.mode == "x0":
            target = x0.values
            x0_hat = pred
        else:
            s = (t - diffusion.n).clamp(min=0)
            shifted = sample_forward(x0, s.clamp(min=1), eps, self.schedule, diffusion.noise_coeff).values
            target = torch.where((s == 0)[:, None, None], x0.values, shifted)
            x0_hat = predict_x0_from_xprev(xt.values, pred, t, s, self.schedule, diffusion.noise_coeff)

        eps1 = self._randn(x0.values.shape, generator)
        rows = torch.ones(size, dtype=torch.bool, device=self.device)
        if not self.config.loss.x1_every_step:
            rows = t == 1
        pred1 = target1 = mask1 = None
        if rows.any():
            x0_rows = LatentSeq(values=x0.values[rows], t=0, pad_mask=mask[rows])
            x1 = sample_forward(x0_rows, 1, eps1[rows], self.schedule, diffusion.noise_coeff)
            pred1 = self.model(x1, 1, cond.select(rows))
            target1 = posterior_mean(x1, x0_rows, 1, self.schedule)
            mask1 = None if loss_mask is None else mask[rows]

        l_simple = simple_prime_loss(pred, target, pred1, target1, loss_mask, mask1)
        l_r = rounding_loss(x0_hat, tokens, self.model.embedding.lm_head, loss_mask)
        return l_simple, l_r

    def train_step(self, batch: CaptionBatch) -> LossBreakdown:
        """One optimizer update; returns the loss measured before the update."""
        self.model.train()
        self.lr = lr_at(min(self.step, self.total_steps), self.total_steps, self.cfg)
        for group in self.optimizer.param_groups:
            group["lr"] = self.lr

        l_simple, l_r = self.compute_losses(batch, self.generator, train=True)
        lam = self.lam
        total = l_simple + lam * l_r
        if not torch.isfinite(total):
            logger.error(f"Divergence at step {self.step}: L_simple'={l_simple.item()}, L_R={l_r.item()}")
            raise DivergenceError(f"non-finite training loss at step {self.step}")

        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        if self.cfg.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.optimizer.step()

        breakdown = total_loss(l_simple.item(), l_r.item(), lam)
        self.lam = lambda_at(breakdown.l_simple_prime, breakdown.l_r, self.cfg)
        self.step += 1
        return breakdown

    @torch.no_grad()
    def evaluate(self, loader: DataLoader) -> LossBreakdown:
        self.model.eval()
        generator = torch.Generator().manual_seed(self.cfg.seed + 1)
        losses = []
        for batch in loader:
            l_simple, l_r = self.compute_losses(batch, generator, train=False)
            losses.append(total_loss(l_simple.item(), l_r.item(), self.lam))
        return mean_breakdown(losses, self.lam)

    def validation_bleu(self, records: list[CaptionRecord], features: FeatureFile) -> float:
        generator = CaptionGenerator(self.model, self.schedule, self.vocab, self.config)
        captions = generator.caption_records(records, features)
        candidates = [split_words(c) for c in captions]
        references = [[split_words(ref) for ref in r.captions] for r in records]
        return corpus_bleu(candidates, references).score

    def make_loader(self, records: list[CaptionRecord], features: FeatureFile, epoch: int = 0,
                    shuffle: bool = True) -> DataLoader:
        dataset = CaptionDataset(records, features, self.vocab, self.config.model.max_len)
        order = torch.Generator().manual_seed(self.cfg.seed * 1000 + epoch)
        return DataLoader(dataset, batch_size=self.cfg.batch_size, shuffle=shuffle,
                          generator=order, collate_fn=collate)

    def state_dict(self) -> dict:
        return {
            "step": self.step,
            "epoch": self.epoch,
            "lam": self.lam,
            "lr": self.lr,
            "best_val": self.best_val,
            "best_epoch": self.best_epoch,
            "best_state": self.best_state,
            "metrics": self.metrics,
            "optimizer": self.optimizer.state_dict(),
            "generator": self.generator.get_state(),
        }

    def load_state_dict(self, state: dict):
        self.step = state["step"]
        self.epoch = state["epoch"]
        self.lam = state["lam"]
        self.lr = state["lr"]
        self.best_val = state["best_val"]
        self.best_epoch = state["best_epoch"]
        self.best_state = state["best_state"]
        self.metrics = list(state["metrics"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.generator.set_state(state["generator"])

    def write_metrics(self, out_dir: Path):
        with open(out_dir / METRICS_FILE, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(self.metrics)

    def fit(self, train: list[CaptionRecord], val: list[CaptionRecord], features: FeatureFile,
            out_dir: str | Path) -> FitResult:
        """
        Train until epochs_max, max_steps, or the first epoch whose mean validation loss
        exceeds its mean training loss. An early stop restores the best-validation weights;
        a run that reaches its epoch or step limit keeps its last weights.

        Args:
            train: training records
            val: validation records
            features: feature file both splits index into
            out_dir: receives metrics.csv and checkpoints/{last,final}

        Returns:
            FitResult: run summary with the final checkpoint path
        """
        if not train or not val:
            raise ArgumentError("fit needs non-empty train and validation splits")
        out_dir = Path(out_dir)
        checkpoints = out_dir / CHECKPOINTS_DIR
        out_dir.mkdir(parents=True, exist_ok=True)

        steps_per_epoch = len(self.make_loader(train, features))
        if not self.cfg.max_steps:
            self.total_steps = self.cfg.epochs_max * steps_per_epoch
        val_loader = self.make_loader(val, features, shuffle=False)
        stopped_early = False

        while self.epoch < self.cfg.epochs_max and (not self.cfg.max_steps or self.step < self.cfg.max_steps):
            loader = self.make_loader(train, features, epoch=self.epoch)
            losses = []
            bar = tqdm(loader, desc=f"epoch {self.epoch + 1}", disable=not self.cfg.progress, leave=False)
            for batch in bar:
                losses.append(self.train_step(batch))
                bar.set_postfix(loss=f"{losses[-1].total:.4f}")
                if self.cfg.max_steps and self.step >= self.cfg.max_steps:
                    break
            train_mean = mean_breakdown(losses, self.lam)
            val_mean = self.evaluate(val_loader)
            bleu = self.validation_bleu(val, features)
            self.epoch += 1

            self.metrics.append({
                "epoch": self.epoch,
                "lr": self.lr,
                "lambda": self.lam,
                "train_l_simple_prime": train_mean.l_simple_prime,
                "train_l_r": train_mean.l_r,
                "val_l_simple_prime": val_mean.l_simple_prime,
                "val_l_r": val_mean.l_r,
                "val_bleu4": bleu,
            })
            self.write_metrics(out_dir)
            logger.info(
                f"Epoch {self.epoch}: train {train_mean.total:.4f} "
                f"(L_simple' {train_mean.l_simple_prime:.4f}, L_R {train_mean.l_r:.4f}), "
                f"val {val_mean.total:.4f}, BLEU-4 {bleu:.4f}, lr {self.lr:.3e}, lambda {self.lam:.4f}"
            )

            if val_mean.total < self.best_val:
                self.best_val = val_mean.total
                self.best_epoch = self.epoch
                self.best_state = copy.deepcopy(self.model.state_dict())
            save_checkpoint(checkpoints / "last", self.model, self.config, self.vocab,
                            trainer_state=self.state_dict(), meta={"epoch": self.epoch, "step": self.step})

            if self.cfg.early_stop and val_mean.total > train_mean.total:
                logger.info(f"Early stop after epoch {self.epoch}: val {val_mean.total:.4f} > train {train_mean.total:.4f}")
                stopped_early = True
                break

        if not self.metrics:
            self.write_metrics(out_dir)
        if stopped_early and self.best_state is not None:
            logger.info(f"Restoring weights from epoch {self.best_epoch}")
            self.model.load_state_dict(self.best_state)
        final = checkpoints / "final"
        save_checkpoint(final, self.model, self.config, self.vocab,
                        meta={"epoch": self.epoch, "step": self.step, "best_epoch": self.best_epoch})
        return FitResult(epochs_run=self.epoch, best_epoch=self.best_epoch, stopped_early=stopped_early,
                         checkpoint=final, metrics=list(self.metrics))
