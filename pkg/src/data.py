"""
Dataset loaders.
Every source format is normalized into DatasetRecord; the canonical on-disk
form is JSON-lines {"id", "text", "annotations": [{"pos", "suggestions"}]}.
"""

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, Iterator, List, Sequence, Tuple, Union

import numpy as np

from src.core import Sentence, tokenize
from src.errors import ParseError, SubstitutionError, UnknownFormatError

logger = logging.getLogger(__name__)

SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+")


class DataFormat(Enum):
    SWS = "SWS"
    LS07 = "LS07"
    LS14 = "LS14"
    XSUM = "XSUM"


@dataclass(frozen=True)
class Annotation:
    target_position: int
    suggestions: FrozenSet[str] = field(default_factory=frozenset)


@dataclass(frozen=True)
class DatasetRecord:
    sentence_id: str
    sentence: Sentence
    annotations: Tuple[Annotation, ...] = ()

    def __post_init__(self):
        cleaned = []
        for annotation in self.annotations:
            if not 0 <= annotation.target_position < len(self.sentence.tokens):
                raise ValueError(
                    f"record {self.sentence_id}: target position {annotation.target_position} "
                    f"outside [0, {len(self.sentence.tokens)})"
                )
            original = self.sentence.tokens[annotation.target_position].casefold()
            suggestions = frozenset(s for s in annotation.suggestions if s.casefold() != original)
            cleaned.append(Annotation(annotation.target_position, suggestions))
        object.__setattr__(self, "annotations", tuple(cleaned))

    def suggestions_at(self, position: int) -> FrozenSet[str]:
        merged = set()
        for annotation in self.annotations:
            if annotation.target_position == position:
                merged |= annotation.suggestions
        return frozenset(merged)

    def to_json(self) -> Dict:
        return {
            "id": self.sentence_id,
            "text": self.sentence.text,
            "annotations": [
                {"pos": a.target_position, "suggestions": sorted(a.suggestions)} for a in self.annotations
            ],
        }


def parse_format(fmt: Union[str, DataFormat]) -> DataFormat:
    if isinstance(fmt, DataFormat):
        return fmt
    try:
        return DataFormat(str(fmt).upper())
    except ValueError as e:
        raise UnknownFormatError(f"unknown dataset format {fmt!r}") from e


def load(path: str, fmt: Union[str, DataFormat]) -> Iterator[DatasetRecord]:
    """
    Stream the records of a dataset file in file order.

    Raises:
        UnknownFormatError: For a format outside SWS, LS07, LS14, XSUM
        ParseError: With the offending line number
    """
    fmt = parse_format(fmt)
    parser = _LINE_PARSERS[fmt]
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield from parser(line.rstrip("\n"))
            except SubstitutionError as e:
                raise ParseError(e.message, line_number) from e
            except (ValueError, KeyError, TypeError) as e:
                raise ParseError(f"{type(e).__name__}: {e}", line_number) from e


def _parse_sws(line: str) -> Iterable[DatasetRecord]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}") from e
    annotations = tuple(
        Annotation(int(a["pos"]), frozenset(a.get("suggestions", [])))
        for a in obj.get("annotations", [])
    )
    yield DatasetRecord(str(obj["id"]), tokenize(obj["text"]), annotations)


def _parse_gold(gold: str) -> FrozenSet[str]:
    """'bright 3;vivid 1;' -> {'bright', 'vivid'}; counts dropped, lemmas kept."""
    substitutes = set()
    for item in gold.split(";"):
        item = item.strip()
        if not item:
            continue
        head, _, tail = item.rpartition(" ")
        substitutes.add(head.strip() if head and tail.isdigit() else item)
    return frozenset(substitutes)


def _parse_lexsub(line: str) -> Iterable[DatasetRecord]:
    fields = line.split("\t")
    if len(fields) != 5:
        raise ParseError(f"expected 5 tab-separated fields, got {len(fields)}")
    _, instance_id, target_index, text, gold = fields
    sentence = tokenize(text)
    words = list(re.finditer(r"\S+", text.strip()))
    index = int(target_index)
    if not 0 <= index < len(words):
        raise ParseError(f"record {instance_id}: target index {index} outside the sentence")
    word_start = words[index].start()
    position = next((p for p, (start, _) in enumerate(sentence.token_spans) if start == word_start), None)
    if position is None:
        raise ParseError(f"record {instance_id}: no token starts at the target word")
    yield DatasetRecord(instance_id, sentence, (Annotation(position, _parse_gold(gold)),))


def split_sentences(document: str) -> List[str]:
    pieces = []
    for paragraph in document.splitlines():
        pieces.extend(part.strip() for part in SENTENCE_BREAK.split(paragraph))
    return [piece for piece in pieces if piece]


def _parse_xsum(line: str) -> Iterable[DatasetRecord]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}") from e
    for n, text in enumerate(split_sentences(obj["document"])):
        yield DatasetRecord(f"{obj['id']}-{n}", tokenize(text))


_LINE_PARSERS = {
    DataFormat.SWS: _parse_sws,
    DataFormat.LS07: _parse_lexsub,
    DataFormat.LS14: _parse_lexsub,
    DataFormat.XSUM: _parse_xsum,
}


def write_canonical(records: Iterable[DatasetRecord], path: str):
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")


def sample_corpus(records: Sequence[DatasetRecord], n: int, seed: int) -> List[DatasetRecord]:
    """Uniform sample without replacement, clamped to the corpus size, in shuffled order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    records = list(records)
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(len(records))[:min(n, len(records))]
    return [records[i] for i in chosen]
