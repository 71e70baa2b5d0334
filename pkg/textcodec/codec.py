from itertools import groupby
from typing import Optional

import torch
import torch.nn as nn

from config.interfaces import ArgumentError
from diffusion.core import LatentSeq
from textcodec.vocab import Vocab, split_words


def tokenize(text: str, L: int, vocab: Vocab) -> tuple[list[int], list[bool]]:
    """
    Lowercase/whitespace tokenization framed by <bos>/<eos> within L ids.

    Returns:
        tuple: (ids of length L, pad_mask of length L with True at real positions)
    """
    if L < 2:
        raise ArgumentError(f"L must leave room for <bos> and <eos>, got {L}")
    words = split_words(text)[:L - 2]
    ids = [vocab.bos] + [vocab.id_of(w) for w in words] + [vocab.eos]
    mask = [True] * len(ids)
    padding = L - len(ids)
    return ids + [vocab.pad] * padding, mask + [False] * padding


def detokenize(ids, vocab: Vocab) -> str:
    return " ".join(vocab.id_to_token[i] for i in ids if i not in vocab.special_ids)


def dedup_consecutive(tokens: list[str]) -> list[str]:
    return [token for token, _ in groupby(tokens)]


class EmbeddingTable(nn.Module):
    """
    Word embedding rows, also used transposed as the lm-head.

    Rows start as unit-norm Gaussian draws and stay frozen unless trainable is set.
    """

    def __init__(self, vocab_size: int, d_word: int, trainable: bool = False, seed: int = 0):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        rows = torch.randn(vocab_size, d_word, generator=generator)
        rows = rows / rows.norm(dim=-1, keepdim=True)
        self.weight = nn.Parameter(rows, requires_grad=trainable)

    @property
    def frozen(self) -> bool:
        return not self.weight.requires_grad

    @property
    def lm_head(self) -> torch.Tensor:
        return self.weight

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= self.weight.shape[0]):
            raise ArgumentError(f"token id outside [0, {self.weight.shape[0]})")
        return self.weight[tokens.long()]

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.lm_head.T


def embed(tokens, table: EmbeddingTable, pad_mask=None) -> LatentSeq:
    tokens = torch.as_tensor(tokens, dtype=torch.long, device=table.weight.device)
    if pad_mask is not None:
        pad_mask = torch.as_tensor(pad_mask, dtype=torch.bool, device=table.weight.device)
    return LatentSeq(values=table(tokens), t=0, pad_mask=pad_mask)


def argmax_ids(pred_x0: torch.Tensor, table: EmbeddingTable) -> torch.Tensor:
    # torch.argmax returns the first maximal index, so ties go to the lowest id
    return table.logits(pred_x0.to(table.weight.dtype)).argmax(dim=-1)


def decode_argmax(pred_x0: torch.Tensor, table: EmbeddingTable, vocab: Vocab,
                  pad_mask: Optional[torch.Tensor] = None) -> list[str]:
    """
    Per-position argmax over lm-head logits, cut at the first <eos>, specials dropped.

    Args:
        pred_x0: (L, D_word) predicted clean embeddings
        table: embedding table providing the lm-head
        vocab: vocabulary for id -> string
        pad_mask: (L,) True at positions to decode, all positions when omitted

    Returns:
        list[str]: decoded words
    """
    if pred_x0.dim() != 2 or pred_x0.shape[-1] != table.weight.shape[-1]:
        raise ArgumentError(f"pred_x0 must be (L, {table.weight.shape[-1]}), got {tuple(pred_x0.shape)}")
    ids = argmax_ids(pred_x0, table).tolist()
    keep = [True] * len(ids) if pad_mask is None else [bool(m) for m in pad_mask]
    words = []
    for i, kept in zip(ids, keep):
        if not kept:
            continue
        if i == vocab.eos:
            break
        if i not in vocab.special_ids:
            words.append(vocab.id_to_token[i])
    return words
