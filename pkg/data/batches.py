from dataclasses import dataclass
from typing import Optional

import torch
from torch.utils.data import Dataset

from data.dataset import CaptionRecord, FeatureFile
from denoiser.model import CondFeatures
from textcodec.codec import tokenize
from textcodec.vocab import Vocab


@dataclass
class CaptionBatch:
    tokens: torch.Tensor
    pad_mask: torch.Tensor
    image: torch.Tensor
    text: Optional[torch.Tensor]
    keys: list[str]

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def condition(self, is_null: torch.Tensor | bool = False, dtype: torch.dtype = None) -> CondFeatures:
        image = self.image if dtype is None else self.image.to(dtype)
        text = self.text if dtype is None or self.text is None else self.text.to(dtype)
        return CondFeatures(image_vec=image, text_vec=text, is_null=is_null)


class CaptionDataset(Dataset):
    """One example per (record, reference caption) pair."""

    def __init__(self, records: list[CaptionRecord], features: FeatureFile, vocab: Vocab, max_len: int):
        self.features = torch.from_numpy(features.rows)
        self.items = []
        for record in records:
            for caption in record.captions:
                ids, mask = tokenize(caption, max_len, vocab)
                self.items.append((record, ids, mask))

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, index: int) -> dict:
        record, ids, mask = self.items[index]
        text = None if record.text_feature_row is None else self.features[record.text_feature_row]
        return {
            "key": record.key,
            "tokens": torch.tensor(ids, dtype=torch.long),
            "pad_mask": torch.tensor(mask, dtype=torch.bool),
            "image": self.features[record.feature_row],
            "text": text,
        }


def collate(items: list[dict]) -> CaptionBatch:
    texts = [item["text"] for item in items]
    return CaptionBatch(
        tokens=torch.stack([item["tokens"] for item in items]),
        pad_mask=torch.stack([item["pad_mask"] for item in items]),
        image=torch.stack([item["image"] for item in items]),
        text=None if any(t is None for t in texts) else torch.stack(texts),
        keys=[item["key"] for item in items],
    )


def conditions_for(records: list[CaptionRecord], features: FeatureFile) -> CondFeatures:
    """Batched condition features, one row per record."""
    rows = torch.from_numpy(features.rows)
    image = rows[[r.feature_row for r in records]]
    text = None
    if records and all(r.text_feature_row is not None for r in records):
        text = rows[[r.text_feature_row for r in records]]
    return CondFeatures(image_vec=image, text_vec=text)
