"""Report corpora: domain types, file loaders, sentence splitting, chunking,
and marked entity-pair construction for relation classification."""

from __future__ import annotations

import csv
import io
import json
import logging
import random
import re
from dataclasses import dataclass, field, replace

logger = logging.getLogger("hare.corpus")

ENTITY_LABELS = (
    "anatomical_site",
    "ihc_marker",
    "pathological_diagnosis",
    "diagnosis_descriptor",
    "ihc_modifier",
)

# relation type -> (head label, tail label)
RELATION_TYPES = {
    "ihc_marker-ihc_modifier": ("ihc_marker", "ihc_modifier"),
    "diagnosis-diagnosis_descriptor": ("pathological_diagnosis", "diagnosis_descriptor"),
}

NEGATIVE_LABEL = "NEGATIVE"


class CorpusError(ValueError):
    """Raised on malformed or inconsistent corpus files."""


@dataclass(frozen=True)
class Report:
    id: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise CorpusError("report id must be non-empty")
        if not self.text:
            raise CorpusError(f"report {self.id!r}: text must be non-empty")


@dataclass(frozen=True)
class EntityMention:
    start: int
    end: int
    label: str
    surface: str
    confidence: float = 1.0

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise CorpusError(f"invalid span ({self.start}, {self.end})")
        if self.label not in ENTITY_LABELS:
            raise CorpusError(f"unknown entity label {self.label!r}")
        if not (0.0 <= self.confidence <= 1.0):
            raise CorpusError(f"entity confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class RelationInstance:
    head: int
    tail: int
    type: str
    confidence: float = 1.0

    def __post_init__(self):
        if self.head == self.tail:
            raise CorpusError("relation head and tail must differ")
        if self.type not in RELATION_TYPES:
            raise CorpusError(f"unknown relation type {self.type!r}")
        if not (0.0 <= self.confidence <= 1.0):
            raise CorpusError(f"relation confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class AnnotationSet:
    report_id: str
    entities: tuple[EntityMention, ...] = ()
    relations: tuple[RelationInstance, ...] = ()
    source: str = "predicted"  # "gold" or "predicted"

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "relations", tuple(self.relations))
        if self.source not in ("gold", "predicted"):
            raise CorpusError(f"unknown annotation source {self.source!r}")
        n = len(self.entities)
        for rel in self.relations:
            if not (0 <= rel.head < n and 0 <= rel.tail < n):
                raise CorpusError(
                    f"report {self.report_id!r}: relation index out of range "
                    f"(head={rel.head}, tail={rel.tail}, {n} entities)"
                )
            head_label, tail_label = RELATION_TYPES[rel.type]
            if self.entities[rel.head].label != head_label or self.entities[rel.tail].label != tail_label:
                raise CorpusError(
                    f"report {self.report_id!r}: relation {rel.type!r} endpoint labels "
                    f"({self.entities[rel.head].label}, {self.entities[rel.tail].label}) do not match"
                )
        if self.source == "gold":
            for item in (*self.entities, *self.relations):
                if item.confidence != 1.0:
                    raise CorpusError(
                        f"report {self.report_id!r}: gold annotation with confidence {item.confidence}"
                    )

    def validate_spans(self, text: str) -> None:
        for ent in self.entities:
            if ent.end > len(text):
                raise CorpusError(
                    f"report {self.report_id!r}: span ({ent.start}, {ent.end}) out of bounds"
                )
            if text[ent.start : ent.end] != ent.surface:
                raise CorpusError(
                    f"report {self.report_id!r}: surface {ent.surface!r} does not match text "
                    f"at ({ent.start}, {ent.end})"
                )


@dataclass(frozen=True)
class ExpertScore:
    report_id: str
    score: int

    def __post_init__(self):
        if self.score not in (0, 1, 2, 3, 4, 5):
            raise CorpusError(f"report {self.report_id!r}: expert score {self.score} outside 0-5")


@dataclass(frozen=True)
class MarkedPairSample:
    text_with_markers: str
    head_span: tuple[int, int]
    tail_span: tuple[int, int]
    label: str
    origin_report: str


# Tokens are maximal alphanumeric runs or single punctuation characters;
# whitespace only separates.
_TOKEN_RE = re.compile(r"[0-9A-Za-z]+|[^\s0-9A-Za-z]")

# words that end with a period without terminating a sentence
ABBREVIATIONS = frozenset({"approx", "no", "ca", "vs", "fig", "eg", "ie", "cf", "etc", "dr", "mr", "mrs"})


def token_spans(text: str) -> list[tuple[int, int]]:
    return [m.span() for m in _TOKEN_RE.finditer(text)]


def tokenize(text: str) -> list[str]:
    return [text[s:e] for s, e in token_spans(text)]


def _trimmed_span(text: str, start: int, end: int) -> tuple[int, int] | None:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return (start, end) if start < end else None


def _guarded_period(text: str, i: int) -> bool:
    """True when the period at i ends a guarded abbreviation or an initial."""
    j = i
    while j > 0 and (text[j - 1].isalnum() or text[j - 1] == "-"):
        j -= 1
    word = text[j:i]
    if not word:
        return False
    if word.lower() in ABBREVIATIONS:
        return True
    # single letters preceded by a period cover "e.g." / "i.e." style chains
    return len(word) == 1 and word.isalpha() and j > 0 and text[j - 1] == "."


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Sentence spans over text, trimmed of surrounding whitespace.

    Boundaries fall after '.', '!' or '?' when the next non-space character
    starts a new sentence (uppercase, digit, newline, or end of text), and at
    newlines. Periods closing a guarded abbreviation never split.
    """
    spans: list[tuple[int, int]] = []
    n = len(text)
    start = 0
    for i, ch in enumerate(text):
        boundary = False
        if ch in ".!?":
            j = i + 1
            while j < n and text[j] in " \t":
                j += 1
            starts_new = j >= n or text[j] == "\n" or text[j].isupper() or text[j].isdigit()
            boundary = starts_new and not (ch == "." and _guarded_period(text, i))
        elif ch == "\n":
            boundary = True
        if boundary:
            span = _trimmed_span(text, start, i + 1)
            if span:
                spans.append(span)
            start = i + 1
    span = _trimmed_span(text, start, n)
    if span:
        spans.append(span)
    return spans


def chunk_sentence(tokens: list, max_len: int = 512) -> list[list]:
    """Greedy left-to-right split into chunks of at most max_len tokens."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    return [list(tokens[i : i + max_len]) for i in range(0, len(tokens), max_len)]


def _sentence_index(spans: list[tuple[int, int]], pos: int) -> int | None:
    for k, (s, e) in enumerate(spans):
        if s <= pos < e:
            return k
    return None


def _insert_markers(text: str, base: int, head: tuple[int, int], tail: tuple[int, int]) -> str:
    pieces = sorted(
        [(head[0] - base, head[1] - base, "[E1]", "[/E1]"), (tail[0] - base, tail[1] - base, "[E2]", "[/E2]")]
    )
    (s1, e1, o1, c1), (s2, e2, o2, c2) = pieces
    return (
        text[:s1] + o1 + text[s1:e1] + c1 + text[e1:s2] + o2 + text[s2:e2] + c2 + text[e2:]
    )


def build_relation_pairs(
    annots: AnnotationSet, report: Report, mode: str, seed: int
) -> list[MarkedPairSample]:
    """Emit all annotated relations as marked positives plus seeded negative
    pairs at 1:1 (train) or 1:3 (test) positive:negative ratio.

    Negatives are drawn without replacement from type-compatible,
    within-sentence entity pairs that are not annotated. When fewer exist
    than the target, all available are emitted and a shortfall is logged.
    """
    if mode not in ("train", "test"):
        raise ValueError(f"unknown mode {mode!r}")
    if not annots.entities:
        raise CorpusError(f"report {report.id!r}: no entities to pair")
    if not annots.relations:
        return []

    sents = split_sentences(report.text)
    sent_of = [_sentence_index(sents, e.start) for e in annots.entities]

    def sample_for(head_idx: int, tail_idx: int, label: str) -> MarkedPairSample:
        h, t = annots.entities[head_idx], annots.entities[tail_idx]
        lo = min(h.start, t.start)
        hi = max(h.end, t.end)
        # widen to covering sentence bounds when available
        k_lo = _sentence_index(sents, lo)
        k_hi = _sentence_index(sents, hi - 1)
        base, stop = lo, hi
        if k_lo is not None:
            base = min(base, sents[k_lo][0])
        if k_hi is not None:
            stop = max(stop, sents[k_hi][1])
        marked = _insert_markers(report.text[base:stop], base, (h.start, h.end), (t.start, t.end))
        return MarkedPairSample(
            text_with_markers=marked,
            head_span=(h.start, h.end),
            tail_span=(t.start, t.end),
            label=label,
            origin_report=report.id,
        )

    positives = [sample_for(r.head, r.tail, r.type) for r in annots.relations]
    annotated = {(r.head, r.tail) for r in annots.relations}

    candidates: list[tuple[int, int]] = []
    for head_label, tail_label in RELATION_TYPES.values():
        heads = [i for i, e in enumerate(annots.entities) if e.label == head_label]
        tails = [i for i, e in enumerate(annots.entities) if e.label == tail_label]
        for hi in heads:
            for ti in tails:
                if hi == ti or (hi, ti) in annotated:
                    continue
                if sent_of[hi] is not None and sent_of[hi] == sent_of[ti]:
                    candidates.append((hi, ti))
    candidates.sort()

    target = len(positives) * (1 if mode == "train" else 3)
    k = min(target, len(candidates))
    if k < target:
        logger.warning(
            "report %s: only %d negative pairs available (target %d)", report.id, k, target
        )
    rng = random.Random(seed)
    negatives = rng.sample(candidates, k)
    return positives + [sample_for(hi, ti, NEGATIVE_LABEL) for hi, ti in negatives]


def _read_jsonl(path) -> list[tuple[int, dict]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: malformed record at line {lineno}: {exc}") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}: malformed record at line {lineno}: not an object")
            records.append((lineno, obj))
    return records


def load_reports(path) -> list[Report]:
    reports = []
    seen = set()
    for lineno, obj in _read_jsonl(path):
        for key in ("id", "text"):
            if key not in obj:
                raise CorpusError(f"{path}: missing field {key!r} at line {lineno}")
        if obj["id"] in seen:
            raise CorpusError(f"{path}: duplicate report id {obj['id']!r} at line {lineno}")
        seen.add(obj["id"])
        reports.append(Report(id=obj["id"], text=obj["text"]))
    return reports


def load_annotations(path, source: str, reports: list[Report] | None = None) -> dict[str, AnnotationSet]:
    """Load annotation sets keyed by report id.

    Spans are validated against report text when reports are supplied.
    Gold annotations default to confidence 1.0 and must not carry any other.
    """
    by_id = {r.id: r for r in reports} if reports is not None else {}
    out: dict[str, AnnotationSet] = {}
    for lineno, obj in _read_jsonl(path):
        try:
            rid = obj["report_id"]
            entities = tuple(
                EntityMention(
                    start=e["start"],
                    end=e["end"],
                    label=e["label"],
                    surface=e.get("surface", ""),
                    confidence=float(e.get("confidence", 1.0)),
                )
                for e in obj.get("entities", [])
            )
            relations = tuple(
                RelationInstance(
                    head=r["head"],
                    tail=r["tail"],
                    type=r["type"],
                    confidence=float(r.get("confidence", 1.0)),
                )
                for r in obj.get("relations", [])
            )
        except KeyError as exc:
            raise CorpusError(f"{path}: missing field {exc} at line {lineno}") from exc
        report = by_id.get(rid)
        if report is not None:
            # fill surfaces from text before the span check
            filled = []
            for e in entities:
                if not e.surface:
                    if e.end > len(report.text):
                        raise CorpusError(f"report {rid!r}: span ({e.start}, {e.end}) out of bounds")
                    e = replace(e, surface=report.text[e.start : e.end])
                filled.append(e)
            entities = tuple(filled)
        try:
            annots = AnnotationSet(report_id=rid, entities=entities, relations=relations, source=source)
            if report is not None:
                annots.validate_spans(report.text)
        except CorpusError as exc:
            raise CorpusError(f"{path}: line {lineno}: {exc}") from exc
        if rid in out:
            raise CorpusError(f"{path}: duplicate annotation record for report {rid!r} at line {lineno}")
        out[rid] = annots
    return out


def load_expert_scores(path) -> list[ExpertScore]:
    scores = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "report_id" not in reader.fieldnames or "score" not in reader.fieldnames:
            raise CorpusError(f"{path}: expected header 'report_id,score'")
        for row in reader:
            rid = row["report_id"]
            try:
                value = int(row["score"])
            except (TypeError, ValueError):
                raise CorpusError(f"{path}: record {rid!r}: score {row['score']!r} is not an integer")
            try:
                scores.append(ExpertScore(report_id=rid, score=value))
            except CorpusError as exc:
                raise CorpusError(f"{path}: {exc}") from exc
    return scores


def reports_to_jsonl(reports: list[Report]) -> str:
    return "".join(json.dumps({"id": r.id, "text": r.text}, ensure_ascii=False) + "\n" for r in reports)


def annotations_to_jsonl(annots: dict[str, AnnotationSet] | list[AnnotationSet]) -> str:
    items = annots.values() if isinstance(annots, dict) else annots
    lines = []
    for a in items:
        lines.append(
            json.dumps(
                {
                    "report_id": a.report_id,
                    "entities": [
                        {
                            "start": e.start,
                            "end": e.end,
                            "label": e.label,
                            "surface": e.surface,
                            "confidence": e.confidence,
                        }
                        for e in a.entities
                    ],
                    "relations": [
                        {"head": r.head, "tail": r.tail, "type": r.type, "confidence": r.confidence}
                        for r in a.relations
                    ],
                },
                ensure_ascii=False,
            )
            + "\n"
        )
    return "".join(lines)


def expert_scores_to_csv(scores: list[ExpertScore]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["report_id", "score"])
    for s in scores:
        writer.writerow([s.report_id, s.score])
    return buf.getvalue()
