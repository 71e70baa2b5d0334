import pytest
import torch

from config.config import SEED_ENV
from config.sections import build_config
from data.dataset import load_dataset
from data.toy import make_toy_corpus
from denoiser.model import build_denoiser
from diffusion.schedule import build_schedule
from textcodec.vocab import Vocab

TINY_MODEL = {"layers": 2, "heads": 2, "d_word": 8, "d_clip": 16, "max_len": 8}


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


@pytest.fixture(scope="session")
def linear_schedule():
    return build_schedule("linear", 1000, 1e-4, 0.02, subset_count=100)


@pytest.fixture
def toy_dir(tmp_path):
    make_toy_corpus(tmp_path / "toy", num_scenes=10, captions_per_scene=2, dim=16, seed=0)
    return tmp_path / "toy"


@pytest.fixture
def toy_data(toy_dir):
    train, features = load_dataset(toy_dir / "train.jsonl", toy_dir / "features.cdlf")
    val, _ = load_dataset(toy_dir / "val.jsonl", toy_dir / "features.cdlf")
    vocab = Vocab.load(toy_dir / "vocab.txt")
    return train, val, features, vocab


def tiny_config(vocab_size: int, **sections):
    document = {
        "schedule": {"T": 100, "subset_count": 10},
        "model": {**TINY_MODEL, "vocab_size": vocab_size},
        "training": {"batch_size": 4, "epochs_max": 2, "progress": False},
        "infer": {"stages": 3},
    }
    for name, values in sections.items():
        document.setdefault(name, {}).update(values)
    return build_config(document)


def tiny_model(config, dtype=torch.float32):
    use_text = config.guidance.enabled and config.guidance.use_text
    return build_denoiser(config.model, config.embedding, use_text=use_text, seed=config.training.seed, dtype=dtype)
