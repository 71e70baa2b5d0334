import itertools
import logging
from pathlib import Path

import numpy as np

from config.config import (
    TOY_ANIMALS,
    TOY_COLORS,
    TOY_FEATURES_FILE,
    TOY_TEMPLATES,
    TOY_TRAIN_FILE,
    TOY_VAL_FILE,
    TOY_VERBS,
    VOCAB_FILE,
)
from config.interfaces import ArgumentError
from data.dataset import CaptionRecord, FeatureFile, split, write_records
from textcodec.vocab import build_vocab

logger = logging.getLogger("diffcap.data")

TEXT_FEATURE_NOISE = 0.1


def scene_directions(num_scenes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Unit vectors, mutually orthogonal while num_scenes <= dim."""
    gaussian = rng.standard_normal((max(num_scenes, dim), dim))
    if num_scenes <= dim:
        q, _ = np.linalg.qr(gaussian[:dim].T)
        return q.T[:num_scenes].copy()
    return gaussian[:num_scenes] / np.linalg.norm(gaussian[:num_scenes], axis=1, keepdims=True)


def make_toy_corpus(out_dir: str | Path, num_scenes: int = 20, captions_per_scene: int = 3,
                    dim: int = 16, seed: int = 0, val_fraction: float = 0.2,
                    text_features: bool = False) -> dict[str, Path]:
    """
    Write a synthetic caption corpus: one distinct condition vector per scene and
    template captions whose color / animal / verb slots the scene fixes.

    Rows 0..num_scenes-1 of the feature file are image features; with text_features
    the next num_scenes rows hold matching text features (noisy copies).

    Args:
        out_dir: target directory
        num_scenes: number of records, at least 2
        captions_per_scene: references per record, 1..5
        dim: feature width (D_CLIP)
        seed: controls every random choice; equal seeds give identical bytes
        val_fraction: share of scenes written to the held-out split, at least one scene
        text_features: also emit text feature rows for guidance experiments

    Returns:
        dict: paths of the train, val, features and vocab files
    """
    if num_scenes < 2:
        raise ArgumentError(f"num_scenes must be >= 2, got {num_scenes}")
    if not 1 <= captions_per_scene <= len(TOY_TEMPLATES):
        raise ArgumentError(f"captions_per_scene must lie in [1, {len(TOY_TEMPLATES)}]")
    combos = list(itertools.product(TOY_COLORS, TOY_ANIMALS, TOY_VERBS))
    if num_scenes > len(combos):
        raise ArgumentError(f"at most {len(combos)} distinct scenes are available")

    rng = np.random.default_rng(seed)
    picks = rng.permutation(len(combos))[:num_scenes]
    image = scene_directions(num_scenes, dim, rng)
    text = image + TEXT_FEATURE_NOISE * rng.standard_normal(image.shape)
    text /= np.linalg.norm(text, axis=1, keepdims=True)
    rows = np.concatenate([image, text]) if text_features else image

    records = []
    for i, pick in enumerate(picks):
        color, animal, verb = combos[int(pick)]
        captions = [t.format(color=color, animal=animal, verb=verb) for t in TOY_TEMPLATES[:captions_per_scene]]
        records.append(CaptionRecord(key=f"scene-{i:04d}", captions=captions,
                                     feature_row=i,
                                     text_feature_row=num_scenes + i if text_features else None))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "train": out_dir / TOY_TRAIN_FILE,
        "val": out_dir / TOY_VAL_FILE,
        "features": out_dir / TOY_FEATURES_FILE,
        "vocab": out_dir / VOCAB_FILE,
    }
    train, val = split(records, max(val_fraction, 1.0 / num_scenes), seed)
    write_records(train, paths["train"])
    write_records(val, paths["val"])
    FeatureFile(rows=rows.astype(np.float32)).save(paths["features"])
    build_vocab(c for r in records for c in r.captions).save(paths["vocab"])
    logger.info(f"Wrote toy corpus: {len(train)} train / {len(val)} val scenes to {out_dir}")
    return paths
