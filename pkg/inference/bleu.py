from collections import Counter
from dataclasses import dataclass

from sacrebleu.metrics import BLEU

from config.interfaces import ArgumentError, EvaluationError

MAX_ORDER = 4


@dataclass(frozen=True)
class BleuResult:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    length_ratio: float
    translation_length: int
    reference_length: int


def ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def closest_ref_length(candidate_len: int, references: list[list[str]]) -> int:
    # ties go to the shorter reference
    return min((len(r) for r in references), key=lambda r: (abs(r - candidate_len), r))


def corpus_bleu(candidates: list[list[str]], references: list[list[list[str]]],
                max_order: int = MAX_ORDER) -> BleuResult:
    """
    Corpus-level BLEU without smoothing.

    Orders no candidate has n-grams for are left out of the geometric mean, so a
    short exact match still scores 1.

    Args:
        candidates: one token list per sentence
        references: per sentence, one or more reference token lists
        max_order: highest n-gram order

    Returns:
        BleuResult: score in [0, 1], 0 whenever some counted n-gram precision is 0
    """
    if len(candidates) != len(references):
        raise ArgumentError(f"{len(candidates)} candidates but {len(references)} reference groups")
    if not candidates:
        raise EvaluationError("cannot score an empty corpus")
    if any(not refs for refs in references):
        raise ArgumentError("every candidate needs at least one reference")

    correct = [0] * max_order
    total = [0] * max_order
    sys_len = ref_len = 0
    for candidate, refs in zip(candidates, references):
        sys_len += len(candidate)
        ref_len += closest_ref_length(len(candidate), refs)
        for n in range(1, max_order + 1):
            counts = ngram_counts(candidate, n)
            max_ref = Counter()
            for ref in refs:
                max_ref |= ngram_counts(ref, n)
            correct[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            total[n - 1] += sum(counts.values())

    stats = BLEU.compute_bleu(correct, total, sys_len, ref_len, smooth_method="none",
                              effective_order=True, max_ngram_order=max_order)
    return BleuResult(
        score=min(stats.score / 100.0, 1.0),
        precisions=tuple(p / 100.0 for p in stats.precisions),
        brevity_penalty=stats.bp,
        length_ratio=sys_len / ref_len if ref_len else 0.0,
        translation_length=sys_len,
        reference_length=ref_len,
    )


def bleu4(candidates: list[list[str]], references: list[list[list[str]]]) -> float:
    return corpus_bleu(candidates, references, MAX_ORDER).score
