from textcodec.vocab import Vocab, build_vocab, split_words
from textcodec.codec import (
    EmbeddingTable,
    argmax_ids,
    decode_argmax,
    dedup_consecutive,
    detokenize,
    embed,
    tokenize,
)
