"""Model-free entity tagging and relation linking, plus confidence filtering.

The gazetteer tagger and distance-decay linker give the pipeline a fully
deterministic extraction path; externally predicted annotations flow through
the same AnnotationSet type and the same confidence filter.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

from .corpus import (
    ENTITY_LABELS,
    RELATION_TYPES,
    AnnotationSet,
    EntityMention,
    RelationInstance,
    Report,
    split_sentences,
    token_spans,
)


@dataclass(frozen=True)
class LinkerConfig:
    window: int = 20  # max token distance between relation endpoints

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")


def _normalize_entry(entry: str) -> str:
    return " ".join(entry.lower().split())


class Gazetteer:
    """Per-label lexicons matched case-insensitively over token sequences."""

    def __init__(self, lexicons: dict[str, set[str]], priority: tuple[str, ...] = ENTITY_LABELS):
        unknown = set(lexicons) - set(ENTITY_LABELS)
        if unknown:
            raise ValueError(f"unknown gazetteer labels: {sorted(unknown)}")
        self.priority = tuple(priority)
        self.lexicons: dict[str, frozenset[str]] = {}
        # first lowercased token -> [(token tuple, label)]
        self._index: dict[str, list[tuple[tuple[str, ...], str]]] = {}
        for label in self.priority:
            entries = {_normalize_entry(e) for e in lexicons.get(label, ()) if _normalize_entry(e)}
            self.lexicons[label] = frozenset(entries)
            for entry in sorted(entries):
                toks = tuple(t.lower() for s, t in _iter_tokens(entry))
                if toks:
                    self._index.setdefault(toks[0], []).append((toks, label))

    @classmethod
    def from_dir(cls, path, priority: tuple[str, ...] = ENTITY_LABELS) -> "Gazetteer":
        """Load <label>.txt lexicon files from a directory, one entry per
        line, '#' comment lines ignored."""
        lexicons: dict[str, set[str]] = {}
        for name in sorted(os.listdir(path)):
            if not name.endswith(".txt"):
                continue
            label = name[:-4]
            if label not in ENTITY_LABELS:
                raise ValueError(f"{path}/{name}: unknown entity label {label!r}")
            entries = set()
            with open(os.path.join(path, name), encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line and not line.startswith("#"):
                        entries.add(line)
            lexicons[label] = entries
        return cls(lexicons, priority=priority)


def _iter_tokens(text: str) -> list[tuple[tuple[int, int], str]]:
    return [((s, e), text[s:e]) for s, e in token_spans(text)]


def tag_entities(report: Report, gaz: Gazetteer) -> list[EntityMention]:
    """Greedy left-to-right longest-match tagging, non-overlapping.

    Length ties resolve by gazetteer label priority; matches carry
    confidence 1.0.
    """
    spans = token_spans(report.text)
    low = [report.text[s:e].lower() for s, e in spans]
    mentions: list[EntityMention] = []
    i = 0
    rank = {label: k for k, label in enumerate(gaz.priority)}
    while i < len(spans):
        best: tuple[int, int, str] | None = None  # (n_tokens, -priority rank, label)
        for toks, label in gaz._index.get(low[i], ()):
            n = len(toks)
            if i + n > len(spans) or tuple(low[i : i + n]) != toks:
                continue
            if best is None or n > best[0] or (n == best[0] and rank[label] < rank[best[2]]):
                best = (n, rank[label], label)
        if best is None:
            i += 1
            continue
        n, _, label = best
        start, end = spans[i][0], spans[i + n - 1][1]
        mentions.append(
            EntityMention(start=start, end=end, label=label, surface=report.text[start:end], confidence=1.0)
        )
        i += n
    return mentions


def link_relations(
    report: Report, entities: list[EntityMention], cfg: LinkerConfig = LinkerConfig()
) -> list[RelationInstance]:
    """Link each modifier/descriptor to its nearest type-compatible partner
    within the same sentence and within cfg.window tokens.

    Confidence decays linearly with token distance: 1 - distance/window.
    Equidistant partners resolve to the leftmost.
    """
    sents = split_sentences(report.text)
    toks = token_spans(report.text)

    def sent_idx(pos: int) -> int | None:
        for k, (s, e) in enumerate(sents):
            if s <= pos < e:
                return k
        return None

    def first_tok(start: int) -> int:
        for k, (s, e) in enumerate(toks):
            if e > start:
                return k
        return len(toks)

    def last_tok(end: int) -> int:
        for k in range(len(toks) - 1, -1, -1):
            if toks[k][0] < end:
                return k
        return 0

    ent_sent = [sent_idx(e.start) for e in entities]
    relations: list[RelationInstance] = []
    for rtype, (head_label, tail_label) in RELATION_TYPES.items():
        heads = [i for i, e in enumerate(entities) if e.label == head_label]
        for ti, tail in enumerate(entities):
            if tail.label != tail_label:
                continue
            best: tuple[int, int] | None = None  # (distance, head index)
            for hi in heads:
                head = entities[hi]
                if ent_sent[hi] is None or ent_sent[hi] != ent_sent[ti]:
                    continue
                if head.start < tail.start:
                    dist = first_tok(tail.start) - last_tok(head.end)
                else:
                    dist = first_tok(head.start) - last_tok(tail.end)
                if dist > cfg.window:
                    continue
                if best is None or dist < best[0] or (dist == best[0] and entities[hi].start < entities[best[1]].start):
                    best = (dist, hi)
            if best is not None:
                dist, hi = best
                conf = max(0.0, min(1.0, 1.0 - dist / cfg.window))
                relations.append(RelationInstance(head=hi, tail=ti, type=rtype, confidence=conf))
    relations.sort(key=lambda r: (r.head, r.tail))
    return relations


def filter_by_confidence(
    annots: AnnotationSet,
    threshold: float,
    mode: str = "keep_at_or_above",
    relation_threshold: float | None = None,
) -> AnnotationSet:
    """Retain items by confidence: >= threshold (keep_at_or_above) or
    < threshold (keep_below). Relations losing an endpoint are dropped and
    surviving relation indices are remapped."""
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    if mode not in ("keep_at_or_above", "keep_below"):
        raise ValueError(f"unknown filter mode {mode!r}")
    rel_threshold = threshold if relation_threshold is None else relation_threshold

    def keep(confidence: float, t: float) -> bool:
        return confidence >= t if mode == "keep_at_or_above" else confidence < t

    kept = [i for i, e in enumerate(annots.entities) if keep(e.confidence, threshold)]
    remap = {old: new for new, old in enumerate(kept)}
    entities = tuple(annots.entities[i] for i in kept)
    relations = tuple(
        replace(r, head=remap[r.head], tail=remap[r.tail])
        for r in annots.relations
        if keep(r.confidence, rel_threshold) and r.head in remap and r.tail in remap
    )
    return AnnotationSet(
        report_id=annots.report_id, entities=entities, relations=relations, source=annots.source
    )
