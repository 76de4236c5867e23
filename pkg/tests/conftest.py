import random

import pytest

from hare_eval.corpus import AnnotationSet, EntityMention, RelationInstance, Report
from hare_eval.extract import Gazetteer

MARKERS = ["CD20", "CD30", "CD3", "CD15", "ER", "PR", "Ki-67", "CDX2", "CK20", "CK7", "TTF-1", "S100"]
MODIFIERS = ["strong", "strongly", "patchy", "weak", "focal", "diffuse", "positive in most cells"]
DIAGNOSES = [
    "classical Hodgkin lymphoma",
    "invasive ductal carcinoma",
    "chromophobe renal cell carcinoma",
    "diffuse large B cell lymphoma",
    "follicular lymphoma",
    "metastatic melanoma",
    "adenocarcinoma",
]
DESCRIPTORS = ["raises the possibility of", "consistent with", "suspicious for", "in keeping with"]
SITES = ["breast", "lung", "kidney", "lymph node", "left axillary lymph node", "skin", "colon"]

LEXICONS = {
    "ihc_marker": set(MARKERS),
    "ihc_modifier": set(MODIFIERS),
    "pathological_diagnosis": set(DIAGNOSES),
    "diagnosis_descriptor": set(DESCRIPTORS),
    "anatomical_site": set(SITES),
}


@pytest.fixture(scope="session")
def gazetteer():
    return Gazetteer(LEXICONS)


def make_fixture_reports(n: int, seed: int = 7) -> list[Report]:
    """Synthetic reports whose vocabulary the session gazetteer covers."""
    rng = random.Random(seed)
    reports = []
    for i in range(n):
        sentences = [f"Specimen from {rng.choice(SITES)}."]
        for _ in range(rng.randint(1, 3)):
            sentences.append(f"{rng.choice(MARKERS)} {rng.choice(MODIFIERS)} in tumour cells.")
        sentences.append(f"Appearances {rng.choice(DESCRIPTORS)} {rng.choice(DIAGNOSES)}.")
        reports.append(Report(id=f"r{i:03d}", text=" ".join(sentences)))
    return reports


def make_ablation_corpus(n_reports: int = 200, seed: int = 42):
    """Reference/candidate annotation pairs with per-report quality by
    construction: correct extractions carry confidence in [0.75, 1.0),
    distractors in [0.0, 0.65)."""
    rng = random.Random(seed)
    pairs = []
    for i in range(n_reports):
        marker_surfaces = rng.sample([f"marker{k}" for k in range(30)], 4)
        modifier_surfaces = rng.sample([f"modifier{k}" for k in range(30)], 2)
        surfaces = marker_surfaces + modifier_surfaces
        labels = ["ihc_marker"] * 4 + ["ihc_modifier"] * 2
        pos = 0
        ref_entities = []
        for surface, label in zip(surfaces, labels):
            ref_entities.append(
                EntityMention(pos, pos + len(surface), label, surface, confidence=1.0)
            )
            pos += len(surface) + 1
        ref_relations = [
            RelationInstance(head=0, tail=4, type="ihc_marker-ihc_modifier", confidence=1.0),
            RelationInstance(head=1, tail=5, type="ihc_marker-ihc_modifier", confidence=1.0),
        ]
        ref = AnnotationSet(report_id=f"s{i:03d}", entities=tuple(ref_entities),
                            relations=tuple(ref_relations), source="gold")

        kept = sorted(rng.sample(range(6), rng.randint(0, 6)))
        quality = len(kept) / 6.0
        cand_entities = []
        index_map = {}
        for j in kept:
            e = ref_entities[j]
            index_map[j] = len(cand_entities)
            cand_entities.append(
                EntityMention(e.start, e.end, e.label, e.surface, confidence=rng.uniform(0.75, 0.999))
            )
        cand_relations = []
        for r in ref_relations:
            if r.head in index_map and r.tail in index_map:
                cand_relations.append(
                    RelationInstance(index_map[r.head], index_map[r.tail], r.type,
                                     confidence=rng.uniform(0.75, 0.999))
                )
        n_distract = rng.randint(0, 8)
        base = pos + 100
        for d in range(n_distract):
            surface = f"noise{rng.randrange(1000)}"
            label = rng.choice(["ihc_marker", "ihc_modifier"])
            cand_entities.append(
                EntityMention(base, base + len(surface), label, surface,
                              confidence=rng.uniform(0.0, 0.649))
            )
            base += len(surface) + 1
        cand = AnnotationSet(report_id=f"s{i:03d}", entities=tuple(cand_entities),
                             relations=tuple(cand_relations), source="predicted")
        pairs.append((ref, cand, quality))
    return pairs
