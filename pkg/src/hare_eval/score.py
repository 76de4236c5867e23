"""Composite report score: confidence filtering, max-cosine entity alignment,
soft relation matching, and the entity + relation F1 sum."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .corpus import AnnotationSet, RelationInstance
from .embed import cosine_clamped, normalize_key
from .extract import filter_by_confidence

THRESHOLD_MODES = ("at_or_above", "below", "none")

# ablation variants -> threshold mode
ABLATION_VARIANTS = {
    "thresholded": "at_or_above",
    "no_threshold": "none",
    "inverted": "below",
}


@dataclass(frozen=True)
class ScoringConfig:
    entity_threshold: float = 0.7
    relation_threshold: float = 0.7
    threshold_mode: str = "at_or_above"
    relation_align_tau: float = 0.7
    exact_relation_match: bool = False  # endpoint equality on normalized surfaces instead of embeddings

    def __post_init__(self):
        for name in ("entity_threshold", "relation_threshold", "relation_align_tau"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} {value} outside [0, 1]")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")


@dataclass(frozen=True)
class HareBreakdown:
    precision_e: float
    recall_e: float
    f1_e: float
    precision_r: float
    recall_r: float
    f1_r: float
    hare: float
    n_ref_entities: int
    n_cand_entities: int
    n_ref_relations: int
    n_cand_relations: int
    embedder_misses: int = 0

    def to_record(self, report_id: str | None = None) -> dict:
        record: dict = {}
        if report_id is not None:
            record["report_id"] = report_id
        record.update(
            precision_e=self.precision_e,
            recall_e=self.recall_e,
            f1_e=self.f1_e,
            precision_r=self.precision_r,
            recall_r=self.recall_r,
            f1_r=self.f1_r,
            hare=self.hare,
            counts={
                "ref_entities": self.n_ref_entities,
                "cand_entities": self.n_cand_entities,
                "ref_relations": self.n_ref_relations,
                "cand_relations": self.n_cand_relations,
                "embedder_misses": self.embedder_misses,
            },
        )
        return record


def similarity_matrix(ref_vectors: Sequence[np.ndarray], cand_vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Clamped cosine grid: rows are reference entities, columns candidates."""
    S = np.zeros((len(ref_vectors), len(cand_vectors)))
    for i, u in enumerate(ref_vectors):
        for j, v in enumerate(cand_vectors):
            S[i, j] = cosine_clamped(u, v)
    return S


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0.0 else 2.0 * p * r / (p + r)


def entity_prf(S: np.ndarray) -> tuple[float, float, float]:
    """Precision/recall/F1 from the similarity grid: recall averages row
    maxima, precision averages column maxima.

    Both dimensions empty -> (1, 1, 1); exactly one empty -> (0, 0, 0).
    """
    n_ref, n_cand = S.shape
    if n_ref == 0 and n_cand == 0:
        return (1.0, 1.0, 1.0)
    if n_ref == 0 or n_cand == 0:
        return (0.0, 0.0, 0.0)
    recall = float(np.mean(S.max(axis=1)))
    precision = float(np.mean(S.max(axis=0)))
    return (precision, recall, _f1(precision, recall))


def match_relations(
    ref_relations: Sequence[RelationInstance],
    cand_relations: Sequence[RelationInstance],
    entity_similarity: Callable[[int, int], float],
    tau: float,
) -> list[tuple[int, int]]:
    """Greedy one-to-one matching of candidate relations onto references.

    A pair is admissible when types are equal and both endpoint similarities
    reach tau; pairs are taken in descending order of min(head, tail)
    similarity, ties by (reference index, candidate index).
    """
    admissible: list[tuple[float, int, int]] = []
    for ri, r in enumerate(ref_relations):
        for ci, c in enumerate(cand_relations):
            if r.type != c.type:
                continue
            head_sim = entity_similarity(r.head, c.head)
            tail_sim = entity_similarity(r.tail, c.tail)
            if head_sim >= tau and tail_sim >= tau:
                admissible.append((min(head_sim, tail_sim), ri, ci))
    admissible.sort(key=lambda t: (-t[0], t[1], t[2]))
    matched: list[tuple[int, int]] = []
    used_ref: set[int] = set()
    used_cand: set[int] = set()
    for _, ri, ci in admissible:
        if ri in used_ref or ci in used_cand:
            continue
        used_ref.add(ri)
        used_cand.add(ci)
        matched.append((ri, ci))
    return matched


def relation_prf(matched: int, n_ref: int, n_cand: int) -> tuple[float, float, float]:
    """Relation precision/recall/F1 from the matched count, with the same
    empty-set conventions as entity_prf."""
    if matched > min(n_ref, n_cand):
        raise ValueError("matched count exceeds relation counts")
    if n_ref == 0 and n_cand == 0:
        return (1.0, 1.0, 1.0)
    if n_ref == 0 or n_cand == 0:
        return (0.0, 0.0, 0.0)
    precision = matched / n_cand
    recall = matched / n_ref
    return (precision, recall, _f1(precision, recall))


def _apply_threshold(annots: AnnotationSet, cfg: ScoringConfig) -> AnnotationSet:
    if cfg.threshold_mode == "none":
        return annots
    mode = "keep_at_or_above" if cfg.threshold_mode == "at_or_above" else "keep_below"
    return filter_by_confidence(
        annots, cfg.entity_threshold, mode=mode, relation_threshold=cfg.relation_threshold
    )


def hare_score(
    ref: AnnotationSet, cand: AnnotationSet, embedder, cfg: ScoringConfig = ScoringConfig()
) -> HareBreakdown:
    """Full score decomposition for one reference/candidate pair.

    Entities and relations are confidence-filtered per cfg, surviving entity
    surfaces embedded, and both alignment components scored. The embedder
    exposes embed(surface) and optionally contains(surface) for miss counting.
    """
    ref_f = _apply_threshold(ref, cfg)
    cand_f = _apply_threshold(cand, cfg)

    misses = 0
    has_contains = hasattr(embedder, "contains")

    def embed_all(annots: AnnotationSet) -> list[np.ndarray]:
        nonlocal misses
        vectors = []
        for ent in annots.entities:
            if has_contains and not embedder.contains(ent.surface):
                misses += 1
            try:
                vectors.append(embedder.embed(ent.surface))
            except Exception as exc:
                raise type(exc)(f"report {annots.report_id!r}: {exc}") from exc
        return vectors

    ref_vectors = embed_all(ref_f)
    cand_vectors = embed_all(cand_f)
    S = similarity_matrix(ref_vectors, cand_vectors)
    precision_e, recall_e, f1_e = entity_prf(S)

    if cfg.exact_relation_match:
        def entity_similarity(i: int, j: int) -> float:
            same = normalize_key(ref_f.entities[i].surface) == normalize_key(cand_f.entities[j].surface)
            return 1.0 if same else 0.0
    else:
        def entity_similarity(i: int, j: int) -> float:
            return float(S[i, j])

    matches = match_relations(ref_f.relations, cand_f.relations, entity_similarity, cfg.relation_align_tau)
    precision_r, recall_r, f1_r = relation_prf(len(matches), len(ref_f.relations), len(cand_f.relations))

    return HareBreakdown(
        precision_e=precision_e,
        recall_e=recall_e,
        f1_e=f1_e,
        precision_r=precision_r,
        recall_r=recall_r,
        f1_r=f1_r,
        hare=f1_e + f1_r,
        n_ref_entities=len(ref_f.entities),
        n_cand_entities=len(cand_f.entities),
        n_ref_relations=len(ref_f.relations),
        n_cand_relations=len(cand_f.relations),
        embedder_misses=misses,
    )


def ablate(
    ref: AnnotationSet, cand: AnnotationSet, embedder, base_cfg: ScoringConfig = ScoringConfig()
) -> dict[str, HareBreakdown]:
    """Score the pair under the three threshold variants: the configured
    threshold, no threshold, and the inverted (low-confidence only) threshold."""
    return {
        name: hare_score(ref, cand, embedder, replace(base_cfg, threshold_mode=mode))
        for name, mode in ABLATION_VARIANTS.items()
    }
