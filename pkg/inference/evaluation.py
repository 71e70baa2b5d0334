import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from config.interfaces import EvaluationError
from data.dataset import CaptionRecord, FeatureFile
from inference.bleu import corpus_bleu
from inference.generator import CaptionGenerator
from textcodec.vocab import split_words

logger = logging.getLogger("diffcap.inference")


@dataclass
class EvalReport:
    bleu4: float
    n: int
    brevity_penalty: float
    precisions: tuple[float, ...] = ()
    length_ratio: float = 0.0
    sentences: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {"bleu4": self.bleu4, "n": self.n, "brevity_penalty": self.brevity_penalty,
                "precisions": list(self.precisions), "length_ratio": self.length_ratio}

    def save(self, report_path: Path, sentences_path: Path):
        Path(report_path).write_text(json.dumps(self.summary(), indent=2) + "\n", encoding="utf-8")
        with open(sentences_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["key", "caption", "references", "bleu4"], lineterminator="\n")
            writer.writeheader()
            writer.writerows(self.sentences)


def evaluate_records(generator: CaptionGenerator, records: list[CaptionRecord],
                     features: FeatureFile) -> EvalReport:
    """Caption every record and score the corpus, plus per-sentence BLEU-4 rows."""
    if not records:
        raise EvaluationError("no records to evaluate")
    captions = generator.caption_records(records, features)
    candidates = [split_words(c) for c in captions]
    references = [[split_words(ref) for ref in r.captions] for r in records]
    corpus = corpus_bleu(candidates, references)

    sentences = []
    for record, caption, cand, refs in zip(records, captions, candidates, references):
        sentences.append({
            "key": record.key,
            "caption": caption,
            "references": " | ".join(record.captions),
            "bleu4": corpus_bleu([cand], [refs]).score,
        })
    logger.info(f"BLEU-4 {corpus.score:.4f} over {len(records)} records (BP {corpus.brevity_penalty:.4f})")
    return EvalReport(bleu4=corpus.score, n=len(records), brevity_penalty=corpus.brevity_penalty,
                      precisions=corpus.precisions, length_ratio=corpus.length_ratio, sentences=sentences)
