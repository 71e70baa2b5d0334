import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import torch
import torch.nn as nn

from config.config import SPECIAL_TOKENS
from config.interfaces import ArgumentError, DivergenceError
from config.sections import EmbeddingConfig, ModelConfig
from diffusion.core import LatentSeq
from textcodec.codec import EmbeddingTable

logger = logging.getLogger("diffcap.denoiser")


@dataclass
class CondFeatures:
    """
    Precomputed condition vectors of width D_CLIP.

    Arguments:
        image_vec: (D_CLIP,) or (B, D_CLIP) image features.
        text_vec: optional text features of the same shape, the guidance context.
        is_null: bool or (B,) bool tensor; null rows use the learned null vector.
    """
    image_vec: torch.Tensor
    text_vec: Optional[torch.Tensor] = None
    is_null: bool | torch.Tensor = False

    @property
    def batched(self) -> bool:
        return self.image_vec.dim() == 2

    def null_mask(self) -> torch.Tensor:
        batch = self.image_vec.shape[0] if self.batched else 1
        if isinstance(self.is_null, torch.Tensor):
            return self.is_null.reshape(batch).to(torch.bool)
        return torch.full((batch,), bool(self.is_null), dtype=torch.bool)

    def all_null(self) -> bool:
        return bool(self.null_mask().all())

    def as_null(self) -> "CondFeatures":
        return replace(self, is_null=True)

    def select(self, rows: torch.Tensor) -> "CondFeatures":
        """Sub-batch by index or boolean mask."""
        return CondFeatures(
            image_vec=self.image_vec[rows],
            text_vec=None if self.text_vec is None else self.text_vec[rows],
            is_null=self.null_mask()[rows],
        )

    def check(self):
        vecs = [self.image_vec] + ([self.text_vec] if self.text_vec is not None else [])
        for v in vecs:
            if not torch.isfinite(v).all():
                raise ArgumentError("condition features must be finite")
        if self.text_vec is not None and self.text_vec.shape != self.image_vec.shape:
            raise ArgumentError("text and image features must share a shape")
        return self


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Fixed sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64, device=t.device) / max(half, 1))
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def project_condition(cond: CondFeatures, proj: nn.Module, null_vec: torch.Tensor,
                      use_text: bool = True) -> list[torch.Tensor]:
    """
    Map each provided feature to D_word; null rows take null_vec without projection.

    Returns:
        list[Tensor]: one (B, D_word) tensor per feature, image first
    """
    cond.check()
    features = [cond.image_vec]
    if use_text and cond.text_vec is not None:
        features.append(cond.text_vec)
    null_rows = cond.null_mask().to(null_vec.device)
    projected = []
    for feature in features:
        feature = feature if cond.batched else feature.unsqueeze(0)
        feature = feature.to(device=null_vec.device, dtype=null_vec.dtype)
        try:
            vec = proj(feature)
        except RuntimeError as e:
            raise ArgumentError(f"condition width mismatch: {e}") from e
        if vec.shape[-1] != null_vec.shape[-1]:
            raise ArgumentError(f"projection width {vec.shape[-1]} != D_word {null_vec.shape[-1]}")
        projected.append(torch.where(null_rows[:, None], null_vec.expand_as(vec), vec))
    return projected


class Denoiser(nn.Module):
    """
    Transformer encoder restoring caption embeddings from x_t, conditioned on image
    (and optionally text) features and the timestep.
    """

    def __init__(self, config: ModelConfig, embedding: EmbeddingConfig = None, use_text: bool = False):
        super().__init__()
        if config.vocab_size <= len(SPECIAL_TOKENS):
            raise ArgumentError(f"model.vocab_size too small: {config.vocab_size}")
        embedding = embedding or EmbeddingConfig()
        self.config = config
        self.use_text = use_text
        d = config.d_word

        self.embedding = EmbeddingTable(config.vocab_size, d, trainable=embedding.trainable, seed=embedding.seed)
        # projected conditions come out at unit scale per coordinate, like the segment and position rows
        self.cond_proj = nn.Sequential(nn.Linear(config.d_clip, d), nn.GELU(), nn.Linear(d, d), nn.LayerNorm(d))
        self.null_cond = nn.Parameter(torch.randn(d))
        self.position = nn.Embedding(config.max_len, d)
        if config.fusion == "concat":
            self.segment = nn.Embedding(2, d)
        layer = nn.TransformerEncoderLayer(
            d_model=d,
            nhead=config.heads,
            dim_feedforward=config.ff_mult * d,
            dropout=config.dropout,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=config.layers, enable_nested_tensor=False)
        self.final_norm = nn.LayerNorm(d)
        self.out = nn.Linear(d, d)

    def project_condition(self, cond: CondFeatures) -> list[torch.Tensor]:
        return project_condition(cond, self.cond_proj, self.null_cond, use_text=self.use_text)

    def fuse(self, x_t: torch.Tensor, cond_vecs: list[torch.Tensor]) -> tuple[torch.Tensor, list[int]]:
        """
        Combine caption latents (B, L, D) with projected condition vectors.

        Returns:
            tuple: (fused sequence, output positions to discard)
        """
        L = x_t.shape[1]
        positions = torch.arange(L, device=x_t.device)
        fused = x_t + self.position(positions)
        if self.config.fusion == "add":
            for vec in cond_vecs:
                fused = fused + vec[:, None, :]
            return fused, []
        if not cond_vecs:
            return fused + self.segment.weight[0], []
        cond_tokens = torch.stack(cond_vecs, dim=1) + self.segment.weight[1]
        fused = torch.cat([fused + self.segment.weight[0], cond_tokens], dim=1)
        return fused, list(range(L, L + len(cond_vecs)))

    def forward(self, x_t: torch.Tensor | LatentSeq, t, cond: CondFeatures) -> torch.Tensor:
        values = x_t.values if isinstance(x_t, LatentSeq) else x_t
        unbatched = values.dim() == 2
        if unbatched:
            values = values.unsqueeze(0)
        batch, L, _ = values.shape
        if L > self.config.max_len:
            raise ArgumentError(f"sequence length {L} exceeds max_len {self.config.max_len}")
        t = torch.as_tensor(t, device=values.device).long().reshape(-1).expand(batch)

        cond_vecs = [vec.expand(batch, -1) for vec in self.project_condition(cond)]
        fused, discard = self.fuse(values, cond_vecs)
        fused = fused + timestep_embedding(t, self.config.d_word).to(fused.dtype)[:, None, :]
        hidden = self.final_norm(self.encoder(fused))
        keep = hidden.shape[1] - len(discard)
        out = self.out(hidden[:, :keep])
        if not torch.isfinite(out).all():
            logger.error("Non-finite denoiser output")
            raise DivergenceError("non-finite activations in denoiser forward")
        return out[0] if unbatched else out

    def guided_forward(self, x_t, t, cond: CondFeatures, w: float) -> torch.Tensor:
        """(1 + w) * conditioned - w * null-conditioned prediction."""
        if w < 0:
            raise ArgumentError(f"guidance weight must be >= 0, got {w}")
        if w == 0:
            return self.forward(x_t, t, cond)
        guided = self.forward(x_t, t, cond)
        unguided = self.forward(x_t, t, cond.as_null())
        return (1 + w) * guided - w * unguided


def build_denoiser(config: ModelConfig, embedding: EmbeddingConfig = None, use_text: bool = False,
                   seed: int = 0, dtype: torch.dtype = torch.float32) -> Denoiser:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = Denoiser(config, embedding, use_text=use_text)
    n_params = sum(p.numel() for p in model.parameters() if p.requires_grad)
    logger.debug(f"Built denoiser: {config.layers} layers, d_word={config.d_word}, {n_params} trainable params")
    return model.to(dtype)
