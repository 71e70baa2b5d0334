"""Long toy-corpus training runs, deselected by default (run with -m slow)."""

import pytest

from config.sections import build_config
from data.dataset import load_dataset
from data.toy import make_toy_corpus
from denoiser.model import build_denoiser
from diffusion.schedule import schedule_from_config
from inference.bleu import corpus_bleu
from inference.generator import CaptionGenerator
from training.trainer import Trainer
from textcodec.vocab import Vocab, split_words

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    paths = make_toy_corpus(tmp_path_factory.mktemp("toy"), num_scenes=20, captions_per_scene=3, seed=0)
    train, features = load_dataset(paths["train"], paths["features"])
    val, _ = load_dataset(paths["val"], paths["features"])
    return train, val, features, Vocab.load(paths["vocab"])


def baseline(vocab, **training):
    return build_config({
        "model": {"vocab_size": len(vocab)},
        "training": {"batch_size": 8, "lambda_value": 0.3, "lr_kind": "linear", "lr_start": 1e-4,
                     "lr_end": 5e-5, "early_stop": False, "epochs_max": 1000, "max_steps": 2000, **training},
    })


def fit(config, corpus, out_dir):
    train, val, features, vocab = corpus
    model = build_denoiser(config.model, config.embedding, seed=config.training.seed)
    trainer = Trainer(model, schedule_from_config(config.schedule), config, vocab)
    result = trainer.fit(train, val, features, out_dir)
    return trainer, result


def test_memorizes_toy_corpus(corpus, tmp_path, monkeypatch):
    train, _, features, vocab = corpus
    assert len(train) == 16
    config = baseline(vocab)
    trainer, _ = fit(config, corpus, tmp_path)
    generator = CaptionGenerator(trainer.model, trainer.schedule, vocab, config)
    calls = []
    original = trainer.model.forward
    monkeypatch.setattr(trainer.model, "forward", lambda *a, **k: calls.append(1) or original(*a, **k))
    captions = generator.caption_records(train, features)
    assert len(calls) == 5

    score = corpus_bleu([split_words(c) for c in captions],
                        [[split_words(r) for r in record.captions] for record in train]).score
    assert score >= 0.9


def test_rounding_weight_trades_losses(corpus, tmp_path):
    _, _, _, vocab = corpus
    runs = {}
    for lam in (0.0, 0.3):
        config = baseline(vocab, lambda_value=lam, max_steps=600)
        _, result = fit(config, corpus, tmp_path / str(lam))
        runs[lam] = result.metrics[-1]
    assert runs[0.0]["train_l_simple_prime"] < runs[0.3]["train_l_simple_prime"]
    assert runs[0.0]["train_l_r"] > runs[0.3]["train_l_r"]
