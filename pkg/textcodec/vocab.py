import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from config.config import BOS_TOKEN, EOS_TOKEN, PAD_TOKEN, SPECIAL_TOKENS, UNK_TOKEN
from config.interfaces import DatasetLoadError

logger = logging.getLogger("diffcap.textcodec")


def split_words(text: str) -> list[str]:
    return text.lower().split()


@dataclass(frozen=True)
class Vocab:
    """
    Token table. Ids 0-3 are <pad>, <bos>, <eos>, <unk>; line number in the vocab file is the id.
    """
    id_to_token: tuple[str, ...]
    token_to_id: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:len(SPECIAL_TOKENS)]) != tuple(SPECIAL_TOKENS):
            raise DatasetLoadError(f"vocab must start with {SPECIAL_TOKENS}")
        mapping = {}
        for i, token in enumerate(self.id_to_token):
            if token in mapping:
                raise DatasetLoadError(f"duplicate vocab entry {token!r} at line {i + 1}")
            mapping[token] = i
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def pad(self) -> int:
        return self.token_to_id[PAD_TOKEN]

    @property
    def bos(self) -> int:
        return self.token_to_id[BOS_TOKEN]

    @property
    def eos(self) -> int:
        return self.token_to_id[EOS_TOKEN]

    @property
    def unk(self) -> int:
        return self.token_to_id[UNK_TOKEN]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(range(len(SPECIAL_TOKENS)))

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk)

    def save(self, path: str | Path):
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except FileNotFoundError:
            raise DatasetLoadError(f"vocab file not found: {path}")
        return cls(id_to_token=tuple(lines))


def build_vocab(texts: Iterable[str]) -> Vocab:
    """Specials first, then words by descending frequency, ties alphabetical."""
    counts = Counter(word for text in texts for word in split_words(text))
    for special in SPECIAL_TOKENS:
        counts.pop(special, None)
    words = sorted(counts, key=lambda w: (-counts[w], w))
    logger.debug(f"Built vocab with {len(words)} words")
    return Vocab(id_to_token=tuple(SPECIAL_TOKENS) + tuple(words))
