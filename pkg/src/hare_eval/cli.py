"""Command-line entry point wiring corpora, extraction, embedding, scoring,
and statistics into reproducible batch runs.

Commands: score, batch, compare, ablate, prep. Exit codes: 0 success,
1 data error, 2 config error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import __version__
from .corpus import (
    AnnotationSet,
    CorpusError,
    Report,
    build_relation_pairs,
    chunk_sentence,
    load_annotations,
    load_expert_scores,
    load_reports,
    split_sentences,
    tokenize,
)
from .embed import EmbedError, HashedEmbedder, VectorStore
from .extract import Gazetteer, LinkerConfig, link_relations, tag_entities
from .score import ABLATION_VARIANTS, ScoringConfig, ablate, hare_score
from .stats import (
    MetricRow,
    PairedSamples,
    StatsError,
    compare_metrics,
    filter_zero_expert,
    format_table,
    normalize,
)

logger = logging.getLogger("hare.cli")

EXIT_OK = 0
EXIT_DATA = 1
EXIT_CONFIG = 2
EXIT_INTERNAL = 3

HARE_MAX = 2.0
EXPERT_MAX = 5.0

_DEFAULTS = {
    "threshold": 0.7,
    "threshold_mode": "above",
    "align_tau": 0.7,
    "embedder": "hashed",
    "extractor": "gazetteer",
    "window": 20,
    "jobs": 1,
    "seed": 0,
    "exclude_zero": True,
}

_MODE_MAP = {"above": "at_or_above", "below": "below", "none": "none"}


class ConfigError(Exception):
    pass


def _configure_logging() -> None:
    level = os.environ.get("HARE_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr)


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags take precedence")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--jobs", type=int, default=None)
    parser.add_argument("--threshold", type=float, default=None)
    parser.add_argument("--threshold-mode", choices=("above", "below", "none"), default=None)
    parser.add_argument("--align-tau", type=float, default=None)
    parser.add_argument("--embedder", choices=("hashed", "store"), default=None)
    parser.add_argument("--extractor", choices=("gazetteer", "external"), default=None)
    parser.add_argument("--out", default=None)


def _resolve(args: argparse.Namespace, keys: tuple[str, ...]) -> dict:
    """Config-file values overlaid by CLI flags; defaults fill the rest."""
    file_cfg = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
    settings = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
        elif key in file_cfg:
            settings[key] = file_cfg[key]
        else:
            settings[key] = _DEFAULTS.get(key)
    return settings


# settings that cannot affect the payload are left out of the digest so
# e.g. serial and parallel runs of one configuration compare byte-identical
_UNDIGESTED = ("jobs", "out", "out_pairs", "out_chunks")


def _digest(settings: dict) -> str:
    digested = {k: v for k, v in settings.items() if k not in _UNDIGESTED}
    return hashlib.sha256(json.dumps(digested, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _meta_line(settings: dict) -> str:
    meta = {
        "tool": "hare-eval",
        "version": __version__,
        "seed": settings.get("seed"),
        "config_digest": _digest(settings),
    }
    return json.dumps({"_meta": meta}) + "\n"


def _check_path(path, what: str):
    if path is None:
        raise ConfigError(f"config error: {what} not configured")
    if not os.path.exists(path):
        raise ConfigError(f"config error: {what} not found: {path}")
    return path


def _build_embedder(settings: dict):
    if settings["embedder"] == "store":
        store_path = _check_path(settings.get("store"), "vector store")
        return VectorStore.load(store_path)
    return HashedEmbedder()


def _scoring_config(settings: dict) -> ScoringConfig:
    return ScoringConfig(
        entity_threshold=settings["threshold"],
        relation_threshold=settings["threshold"],
        threshold_mode=_MODE_MAP[settings["threshold_mode"]],
        relation_align_tau=settings["align_tau"],
    )


class Annotator:
    """Produces an AnnotationSet per report via the gazetteer pipeline or
    an externally supplied prediction file."""

    def __init__(self, settings: dict, role: str, reports: list[Report]):
        self.external: dict[str, AnnotationSet] | None = None
        if settings["extractor"] == "external":
            path = _check_path(settings.get(f"{role}_annotations"), f"{role} annotations file")
            self.external = load_annotations(path, source="predicted", reports=reports)
            self.gaz = None
        else:
            gaz_dir = _check_path(settings.get("gazetteer"), "gazetteer directory")
            self.gaz = Gazetteer.from_dir(gaz_dir)
            self.linker = LinkerConfig(window=settings["window"])

    def annotate(self, report: Report) -> AnnotationSet:
        if self.external is not None:
            annots = self.external.get(report.id)
            if annots is None:
                raise CorpusError(f"no annotation record for report {report.id!r}")
            return annots
        entities = tag_entities(report, self.gaz)
        relations = link_relations(report, entities, self.linker)
        return AnnotationSet(
            report_id=report.id, entities=tuple(entities), relations=tuple(relations), source="predicted"
        )


def _write_output(out_path, text: str) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


_SCORE_KEYS = (
    "ref", "cand", "gazetteer", "store", "ref_annotations", "cand_annotations",
    "threshold", "threshold_mode", "align_tau", "embedder", "extractor", "window", "seed", "out",
)


def cmd_score(args: argparse.Namespace) -> int:
    settings = _resolve(args, _SCORE_KEYS)
    ref_reports = load_reports(_check_path(settings["ref"], "reference report file"))
    cand_reports = load_reports(_check_path(settings["cand"], "candidate report file"))
    if not ref_reports or not cand_reports:
        raise CorpusError("reference and candidate files must each contain a report")
    ref, cand = ref_reports[0], cand_reports[0]
    ref_annotator = Annotator(settings, "ref", ref_reports)
    cand_annotator = Annotator(settings, "cand", cand_reports)
    embedder = _build_embedder(settings)
    breakdown = hare_score(
        ref_annotator.annotate(ref), cand_annotator.annotate(cand), embedder, _scoring_config(settings)
    )
    record = breakdown.to_record(report_id=cand.id)
    record["ref_id"] = ref.id
    _write_output(settings["out"], _meta_line(settings) + json.dumps(record) + "\n")
    return EXIT_OK


def _load_manifest(path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "ref_id" not in reader.fieldnames or "cand_id" not in reader.fieldnames:
            raise CorpusError(f"{path}: expected header 'ref_id,cand_id'")
        for row in reader:
            pairs.append((row["ref_id"], row["cand_id"]))
    return pairs


_BATCH_KEYS = (
    "reports", "manifest", "gazetteer", "store", "ref_annotations", "cand_annotations",
    "threshold", "threshold_mode", "align_tau", "embedder", "extractor", "window", "jobs", "seed", "out",
)


def _score_pairs(settings: dict, variants: bool = False):
    """Score every manifest pair; returns (records, skipped) in manifest order.

    With variants=True each record carries all three ablation breakdowns.
    """
    reports = load_reports(_check_path(settings["reports"], "reports file"))
    by_id = {r.id: r for r in reports}
    manifest = _load_manifest(_check_path(settings["manifest"], "manifest file"))
    ref_annotator = Annotator(settings, "ref", reports)
    cand_annotator = Annotator(settings, "cand", reports)
    embedder = _build_embedder(settings)
    cfg = _scoring_config(settings)

    skipped = [(r, c) for r, c in manifest if r not in by_id or c not in by_id]
    todo = [(r, c) for r, c in manifest if r in by_id and c in by_id]

    annot_cache: dict[tuple[str, str], AnnotationSet] = {}

    def annotated(rid: str, role: str) -> AnnotationSet:
        key = (role, rid)
        if key not in annot_cache:
            annotator = ref_annotator if role == "ref" else cand_annotator
            annot_cache[key] = annotator.annotate(by_id[rid])
        return annot_cache[key]

    # warm the cache serially so worker threads only read it
    for rid, cid in todo:
        annotated(rid, "ref")
        annotated(cid, "cand")

    def score_one(pair: tuple[str, str]):
        rid, cid = pair
        ref_a, cand_a = annotated(rid, "ref"), annotated(cid, "cand")
        if variants:
            return ablate(ref_a, cand_a, embedder, cfg)
        return hare_score(ref_a, cand_a, embedder, cfg)

    jobs = max(1, int(settings["jobs"]))
    if jobs == 1:
        results = [score_one(p) for p in todo]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(score_one, todo))
    return todo, results, skipped


def cmd_batch(args: argparse.Namespace) -> int:
    settings = _resolve(args, _BATCH_KEYS)
    todo, results, skipped = _score_pairs(settings)
    lines = [_meta_line(settings)]
    total = 0.0
    for (rid, cid), breakdown in zip(todo, results):
        record = breakdown.to_record(report_id=cid)
        record["ref_id"] = rid
        lines.append(json.dumps(record) + "\n")
        total += breakdown.hare
    mean = total / len(results) if results else 0.0
    lines.append(json.dumps({"_summary": {"pairs": len(results), "mean_hare": mean}}) + "\n")
    _write_output(settings["out"], "".join(lines))
    if skipped:
        for rid, cid in skipped:
            print(f"skipped unresolved pair ({rid}, {cid})", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _row_record(row: MetricRow, n_excluded: int) -> dict:
    return {
        "metric": row.name,
        "n": row.pearson.n,
        "n_excluded": n_excluded,
        "pearson_r": row.pearson.coefficient,
        "pearson_p": row.pearson.p_value,
        "spearman_rho": row.spearman.coefficient,
        "spearman_p": row.spearman.p_value,
        "kendall_tau": row.kendall.coefficient,
        "kendall_p": row.kendall.p_value,
        "slope": row.regression.slope,
        "intercept": row.regression.intercept,
        "r2": row.regression.r2,
        "rmse": row.regression.rmse,
        "rmse_divisor": "n",
    }


def _load_metric_table(path) -> tuple[list[str], dict[str, dict[str, float]]]:
    """Metric CSV: header report_id,<name>,... -> per-metric {id: value}."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[0] != "report_id":
            raise CorpusError(f"{path}: expected header starting with 'report_id'")
        names = reader.fieldnames[1:]
        table: dict[str, dict[str, float]] = {name: {} for name in names}
        for row in reader:
            for name in names:
                table[name][row["report_id"]] = float(row[name])
    return names, table


def _compare(table: dict[str, dict[str, float]], expert_by_id: dict[str, int],
             maxima: dict[str, float], exclude_zero: bool) -> tuple[list[MetricRow], int]:
    rows_input: dict[str, list[float]] = {}
    expert_norm: list[float] | None = None
    n_excluded = 0
    for name, values in table.items():
        missing = sorted(set(expert_by_id) - set(values))
        extra = sorted(set(values) - set(expert_by_id))
        if missing or extra:
            raise StatsError(
                f"metric {name!r}: misaligned report ids"
                f" (no metric value: {missing[:5]}, no expert score: {extra[:5]})"
            )
        ids = sorted(expert_by_id)
        pairs = PairedSamples(
            ids=tuple(ids),
            metric=tuple(values[i] for i in ids),
            expert=tuple(float(expert_by_id[i]) for i in ids),
        )
        if exclude_zero:
            pairs, n_excluded = filter_zero_expert(pairs)
        rows_input[name] = normalize(pairs.metric, maxima.get(name, 1.0))
        expert_norm = normalize(pairs.expert, EXPERT_MAX)
    if expert_norm is None:
        raise StatsError("no metrics to compare")
    return compare_metrics(rows_input, expert_norm), n_excluded


_COMPARE_KEYS = ("metrics", "expert", "exclude_zero", "seed", "out")


def cmd_compare(args: argparse.Namespace) -> int:
    settings = _resolve(args, _COMPARE_KEYS)
    settings["max"] = dict(args.max or [])
    names, table = _load_metric_table(_check_path(settings["metrics"], "metrics file"))
    expert = load_expert_scores(_check_path(settings["expert"], "expert scores file"))
    expert_by_id = {s.report_id: s.score for s in expert}
    if len(expert_by_id) != len(expert):
        raise CorpusError("duplicate report ids in expert scores")
    rows, n_excluded = _compare(table, expert_by_id, settings["max"], settings["exclude_zero"])
    sys.stdout.write(format_table(rows))
    if settings["out"]:
        payload = _meta_line(settings) + "".join(
            json.dumps(_row_record(row, n_excluded)) + "\n" for row in rows
        )
        _write_output(settings["out"], payload)
    return EXIT_OK


_ABLATE_KEYS = _BATCH_KEYS + ("expert", "exclude_zero")


def cmd_ablate(args: argparse.Namespace) -> int:
    settings = _resolve(args, _ABLATE_KEYS)
    expert = load_expert_scores(_check_path(settings["expert"], "expert scores file"))
    expert_by_id = {s.report_id: s.score for s in expert}
    todo, results, skipped = _score_pairs(settings, variants=True)

    lines = [_meta_line(settings)]
    table_rows: list[MetricRow] = []
    for variant in ABLATION_VARIANTS:
        values = {cid: breakdowns[variant].hare for (rid, cid), breakdowns in zip(todo, results)}
        relevant_expert = {cid: expert_by_id[cid] for cid in values if cid in expert_by_id}
        missing = sorted(set(values) - set(relevant_expert))
        if missing:
            raise StatsError(f"no expert score for candidate reports {missing[:10]}")
        try:
            rows, n_excluded = _compare(
                {variant: values}, relevant_expert, {variant: HARE_MAX}, settings["exclude_zero"]
            )
        except StatsError as exc:
            # e.g. a variant whose scores are all equal has no correlation
            lines.append(json.dumps({"metric": variant, "error": str(exc)}) + "\n")
            continue
        table_rows.extend(rows)
        lines.append(json.dumps(_row_record(rows[0], n_excluded)) + "\n")
    sys.stdout.write(format_table(table_rows))
    if settings["out"]:
        _write_output(settings["out"], "".join(lines))
    if skipped:
        for rid, cid in skipped:
            print(f"skipped unresolved pair ({rid}, {cid})", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


_PREP_KEYS = ("reports", "annotations", "mode", "seed", "out_pairs", "out_chunks", "max_tokens")


def cmd_prep(args: argparse.Namespace) -> int:
    settings = _resolve(args, _PREP_KEYS)
    if settings["mode"] not in ("train", "test"):
        raise ConfigError(f"config error: unknown prep mode {settings['mode']!r}")
    max_tokens = settings.get("max_tokens") or 512
    reports = load_reports(_check_path(settings["reports"], "reports file"))
    gold = load_annotations(_check_path(settings["annotations"], "annotations file"), source="gold", reports=reports)

    pair_lines = [_meta_line(settings)]
    chunk_lines = [_meta_line(settings)]
    n_pos = n_neg = 0
    base_seed = int(settings["seed"])
    for report in reports:
        annots = gold.get(report.id)
        if annots is not None and annots.entities:
            rid_seed = base_seed ^ int.from_bytes(
                hashlib.blake2b(report.id.encode(), digest_size=4).digest(), "little"
            )
            for sample in build_relation_pairs(annots, report, settings["mode"], rid_seed):
                if sample.label == "NEGATIVE":
                    n_neg += 1
                else:
                    n_pos += 1
                pair_lines.append(
                    json.dumps(
                        {
                            "text_with_markers": sample.text_with_markers,
                            "head_span": list(sample.head_span),
                            "tail_span": list(sample.tail_span),
                            "label": sample.label,
                            "origin_report": sample.origin_report,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        for k, (s, e) in enumerate(split_sentences(report.text)):
            tokens = tokenize(report.text[s:e])
            for j, chunk in enumerate(chunk_sentence(tokens, max_tokens)):
                chunk_lines.append(
                    json.dumps(
                        {"report_id": report.id, "sentence": k, "chunk": j, "tokens": chunk},
                        ensure_ascii=False,
                    )
                    + "\n"
                )
    _write_output(settings["out_pairs"], "".join(pair_lines))
    _write_output(settings["out_chunks"], "".join(chunk_lines))
    print(f"positives={n_pos} negatives={n_neg}")
    return EXIT_OK


def _parse_max(value: str) -> tuple[str, float]:
    name, _, v = value.partition("=")
    if not _:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {value!r}")
    return name, float(v)


def _str2bool(value: str) -> bool:
    return value.lower() in ("1", "true", "yes", "on")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hare", description=__doc__)
    parser.add_argument("--version", action="version", version=f"hare-eval {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_score = sub.add_parser("score", help="score one candidate report against one reference")
    p_score.add_argument("--ref", help="reference report file (jsonl)")
    p_score.add_argument("--cand", help="candidate report file (jsonl)")
    p_score.add_argument("--gazetteer", help="gazetteer directory")
    p_score.add_argument("--store", help="vector store file")
    p_score.add_argument("--ref-annotations", help="external predicted annotations for references")
    p_score.add_argument("--cand-annotations", help="external predicted annotations for candidates")
    _add_common_flags(p_score)
    p_score.set_defaults(func=cmd_score)

    p_batch = sub.add_parser("batch", help="score all manifest pairs over a report corpus")
    p_batch.add_argument("--reports", help="report corpus file (jsonl)")
    p_batch.add_argument("--manifest", help="CSV of ref_id,cand_id pairs")
    p_batch.add_argument("--gazetteer")
    p_batch.add_argument("--store")
    p_batch.add_argument("--ref-annotations")
    p_batch.add_argument("--cand-annotations")
    _add_common_flags(p_batch)
    p_batch.set_defaults(func=cmd_batch)

    p_compare = sub.add_parser("compare", help="correlate metric values with expert scores")
    p_compare.add_argument("--metrics", help="CSV: report_id,<metric>,...")
    p_compare.add_argument("--expert", help="CSV: report_id,score")
    p_compare.add_argument("--exclude-zero", nargs="?", const=True, default=None, type=_str2bool,
                           help="drop pairs with raw expert score 0 (default true)")
    p_compare.add_argument("--max", action="append", type=_parse_max, metavar="NAME=VALUE",
                           help="normalization divisor for a metric column (default 1.0)")
    _add_common_flags(p_compare)
    p_compare.set_defaults(func=cmd_compare)

    p_ablate = sub.add_parser("ablate", help="run threshold ablation variants and compare each to expert scores")
    p_ablate.add_argument("--reports")
    p_ablate.add_argument("--manifest")
    p_ablate.add_argument("--gazetteer")
    p_ablate.add_argument("--store")
    p_ablate.add_argument("--ref-annotations")
    p_ablate.add_argument("--cand-annotations")
    p_ablate.add_argument("--expert")
    p_ablate.add_argument("--exclude-zero", nargs="?", const=True, default=None, type=_str2bool)
    _add_common_flags(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_prep = sub.add_parser("prep", help="emit marked relation-pair samples and chunked sentences")
    p_prep.add_argument("--reports")
    p_prep.add_argument("--annotations", help="gold annotations file")
    p_prep.add_argument("--mode", choices=("train", "test"))
    p_prep.add_argument("--out-pairs", required=True)
    p_prep.add_argument("--out-chunks", required=True)
    p_prep.add_argument("--max-tokens", type=int, default=None)
    _add_common_flags(p_prep)
    p_prep.set_defaults(func=cmd_prep)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusError, StatsError, EmbedError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
