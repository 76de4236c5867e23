"""Inference passes over transformer checkpoints.

Entity decoding uses a BIO scheme over per-token argmax labels: `B-X`
opens a span, `I-X` extends a span of the same type (a stray `I-X`
opens one), anything else closes it. Span confidence is the mean of the
per-token maximum class probabilities. Inputs longer than the model
limit are split into non-overlapping chunks before inference.
"""

from dataclasses import dataclass

import torch
from transformers import (
    AutoModel,
    AutoModelForSequenceClassification,
    AutoModelForTokenClassification,
    AutoTokenizer,
)

from .config import BridgeConfig
from .formats import AnnotationRecord, ReportRecord, normalize_key

DECODING_SCHEME = "bio-argmax; span confidence = mean of per-token max class probability"

# head label and tail label admitted for each relation type
RELATION_SCHEMA = {
    "ihc_marker-ihc_modifier": ("ihc_marker", "ihc_modifier"),
    "diagnosis-diagnosis_descriptor": ("pathological_diagnosis", "diagnosis_descriptor"),
}

HEAD_OPEN, HEAD_CLOSE = "[E1]", "[/E1]"
TAIL_OPEN, TAIL_CLOSE = "[E2]", "[/E2]"


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    label: str
    confidence: float


def _load(checkpoint: str, loader, device: str):
    try:
        tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        model = loader.from_pretrained(checkpoint)
    except Exception as exc:
        raise CheckpointError(f"cannot load checkpoint {checkpoint!r}: {exc}") from exc
    model.to(device)
    model.eval()
    return tokenizer, model


def _decode_bio(ids, offsets, probs, id2label) -> list[Span]:
    spans = []
    current = None  # [start, end, label, [token confidences]]

    def close():
        nonlocal current
        if current is not None:
            start, end, label, confs = current
            spans.append(Span(start, end, label, sum(confs) / len(confs)))
            current = None

    for (start, end), row in zip(offsets, probs):
        if end == start:  # special or padding token
            continue
        idx = int(row.argmax())
        conf = float(row[idx])
        tag = id2label[idx]
        if tag.startswith("B-"):
            close()
            current = [start, end, tag[2:], [conf]]
        elif tag.startswith("I-"):
            if current is not None and current[2] == tag[2:]:
                current[1] = end
                current[3].append(conf)
            else:
                close()
                current = [start, end, tag[2:], [conf]]
        else:
            close()
    close()
    return spans


def extract_entities(reports: list[ReportRecord], cfg: BridgeConfig) -> dict[str, list[Span]]:
    tokenizer, model = _load(cfg.ner_checkpoint, AutoModelForTokenClassification, cfg.device)
    id2label = {int(k): v for k, v in model.config.id2label.items()}
    out: dict[str, list[Span]] = {}
    for report in reports:
        enc = tokenizer(
            report.text,
            return_offsets_mapping=True,
            return_overflowing_tokens=True,
            truncation=True,
            max_length=cfg.max_length,
            padding=True,
            return_tensors="pt",
        )
        spans: list[Span] = []
        input_ids = enc["input_ids"].to(cfg.device)
        attention = enc["attention_mask"].to(cfg.device)
        for lo in range(0, input_ids.shape[0], cfg.batch_size):
            hi = lo + cfg.batch_size
            with torch.no_grad():
                logits = model(input_ids=input_ids[lo:hi], attention_mask=attention[lo:hi]).logits
            probs = torch.softmax(logits, dim=-1).cpu()
            for chunk in range(probs.shape[0]):
                keep = attention[lo + chunk].bool().cpu()
                offsets = enc["offset_mapping"][lo + chunk][keep].tolist()
                spans.extend(_decode_bio(input_ids[lo + chunk], offsets, probs[chunk][keep], id2label))
        out[report.id] = sorted(spans, key=lambda s: (s.start, s.end))
    return out


def _marked_text(text: str, head: Span, tail: Span) -> str:
    inserts = sorted(
        [
            (head.start, HEAD_OPEN),
            (head.end, HEAD_CLOSE),
            (tail.start, TAIL_OPEN),
            (tail.end, TAIL_CLOSE),
        ],
        key=lambda item: item[0],
        reverse=True,
    )
    for pos, marker in inserts:
        text = text[:pos] + marker + text[pos:]
    return text


def _candidate_pairs(spans: list[Span], window: int):
    for rtype, (head_label, tail_label) in sorted(RELATION_SCHEMA.items()):
        for i, head in enumerate(spans):
            if head.label != head_label:
                continue
            for j, tail in enumerate(spans):
                if j == i or tail.label != tail_label:
                    continue
                gap = max(head.start, tail.start) - min(head.end, tail.end)
                if gap <= window:
                    yield rtype, i, j


def classify_relations(
    reports: list[ReportRecord], entities: dict[str, list[Span]], cfg: BridgeConfig
) -> dict[str, list[dict]]:
    tokenizer, model = _load(cfg.re_checkpoint, AutoModelForSequenceClassification, cfg.device)
    label2id = {v: int(k) for k, v in model.config.id2label.items()}
    out: dict[str, list[dict]] = {report.id: [] for report in reports}
    for report in reports:
        spans = entities.get(report.id, [])
        candidates = list(_candidate_pairs(spans, cfg.pair_window))
        texts = [_marked_text(report.text, spans[i], spans[j]) for _, i, j in candidates]
        for lo in range(0, len(candidates), cfg.batch_size):
            batch = texts[lo : lo + cfg.batch_size]
            enc = tokenizer(
                batch, truncation=True, max_length=cfg.max_length, padding=True, return_tensors="pt"
            ).to(cfg.device)
            with torch.no_grad():
                probs = torch.softmax(model(**enc).logits, dim=-1).cpu()
            for row, (rtype, i, j) in zip(probs, candidates[lo : lo + cfg.batch_size]):
                type_id = label2id.get(rtype)
                if type_id is None or int(row.argmax()) != type_id:
                    continue
                out[report.id].append(
                    {"head": i, "tail": j, "type": rtype, "confidence": float(row[type_id])}
                )
    return out


def export_annotations(reports: list[ReportRecord], cfg: BridgeConfig) -> list[AnnotationRecord]:
    """Predicted annotations for every report, in corpus order.

    Every prediction is emitted with its probability; no confidence
    filtering happens here.
    """
    entities = extract_entities(reports, cfg)
    relations = classify_relations(reports, entities, cfg)
    records = []
    for report in reports:
        records.append(
            AnnotationRecord(
                report_id=report.id,
                entities=[
                    {
                        "start": s.start,
                        "end": s.end,
                        "label": s.label,
                        "surface": report.text[s.start : s.end],
                        "confidence": s.confidence,
                    }
                    for s in entities[report.id]
                ],
                relations=relations[report.id],
            )
        )
    return records


def export_vectors(records: list[AnnotationRecord], cfg: BridgeConfig) -> tuple[dict, int]:
    """One unit-norm vector per unique normalized entity surface.

    Vectors are subword embeddings mean-pooled over non-special tokens
    and renormalized; the store dimension is the checkpoint hidden size.
    """
    tokenizer, model = _load(cfg.embed_checkpoint, AutoModel, cfg.device)
    dim = model.config.hidden_size
    keys = sorted(
        {
            key
            for record in records
            for entity in record.entities
            if (key := normalize_key(entity.get("surface", "")))
        }
    )
    entries: dict[str, list[float]] = {}
    for lo in range(0, len(keys), cfg.batch_size):
        batch = keys[lo : lo + cfg.batch_size]
        enc = tokenizer(
            batch,
            truncation=True,
            max_length=cfg.max_length,
            padding=True,
            return_special_tokens_mask=True,
            return_tensors="pt",
        )
        special = enc.pop("special_tokens_mask")
        enc = enc.to(cfg.device)
        with torch.no_grad():
            hidden = model(**enc).last_hidden_state.cpu()
        mask = (enc["attention_mask"].cpu().bool() & ~special.bool()).unsqueeze(-1)
        summed = (hidden * mask).sum(dim=1)
        counts = mask.sum(dim=1).clamp(min=1)
        pooled = summed / counts
        norms = pooled.norm(dim=-1, keepdim=True).clamp(min=1e-12)
        unit = pooled / norms
        for key, vector in zip(batch, unit):
            entries[key] = [float(x) for x in vector]
    return entries, dim
