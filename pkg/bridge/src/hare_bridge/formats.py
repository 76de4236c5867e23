"""Readers and writers for the evaluation toolkit's file formats.

This package talks to the scoring toolkit only through these files, so
the formats are reproduced here rather than imported: reports and
annotations as JSONL, vector stores as a `dim=` header followed by one
tab-separated entry per key.
"""

import json
from dataclasses import dataclass, field


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class ReportRecord:
    id: str
    text: str


@dataclass
class AnnotationRecord:
    report_id: str
    entities: list = field(default_factory=list)
    relations: list = field(default_factory=list)


def normalize_key(text: str) -> str:
    """Lowercase, collapse internal whitespace, strip edge punctuation."""
    key = " ".join(text.lower().split())
    start, end = 0, len(key)
    while start < end and not (key[start].isalnum() or key[start].isspace()):
        start += 1
    while end > start and not (key[end - 1].isalnum() or key[end - 1].isspace()):
        end -= 1
    return key[start:end].strip()


def read_reports(path) -> list[ReportRecord]:
    reports = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: malformed record at line {lineno}: {exc}") from exc
            if "id" not in obj or "text" not in obj:
                raise FormatError(f"{path}: missing id or text at line {lineno}")
            reports.append(ReportRecord(id=obj["id"], text=obj["text"]))
    return reports


def read_annotations(path) -> list[AnnotationRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: malformed record at line {lineno}: {exc}") from exc
            if "report_id" not in obj:
                raise FormatError(f"{path}: missing report_id at line {lineno}")
            records.append(
                AnnotationRecord(
                    report_id=obj["report_id"],
                    entities=list(obj.get("entities", [])),
                    relations=list(obj.get("relations", [])),
                )
            )
    return records


def write_annotations(records: list[AnnotationRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(
                json.dumps(
                    {
                        "report_id": record.report_id,
                        "entities": record.entities,
                        "relations": record.relations,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def write_vector_store(entries: dict, dim: int, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={dim}\n")
        for key in sorted(entries):
            fh.write(key + "\t" + " ".join(repr(float(x)) for x in entries[key]) + "\n")


def write_sidecar_metadata(path, payload: dict) -> None:
    """Provenance and decoding choices go next to the output file, never
    inside it; the main files stay strictly in the consumer's format."""
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
