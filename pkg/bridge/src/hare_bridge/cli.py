import argparse
import sys

from .config import BridgeConfig
from .formats import (
    FormatError,
    read_annotations,
    read_reports,
    write_annotations,
    write_sidecar_metadata,
    write_vector_store,
)
from .infer import DECODING_SCHEME, CheckpointError, export_annotations, export_vectors

EXIT_OK = 0
EXIT_DATA = 1
EXIT_CHECKPOINT = 2


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--device", default="cpu")
    sub.add_argument("--batch-size", type=int, default=16)
    sub.add_argument("--max-length", type=int, default=512)
    sub.add_argument("--out", required=True)


def cmd_export_annotations(args: argparse.Namespace) -> int:
    cfg = BridgeConfig(
        ner_checkpoint=args.ner,
        re_checkpoint=args.re,
        device=args.device,
        batch_size=args.batch_size,
        max_length=args.max_length,
        pair_window=args.pair_window,
    )
    reports = read_reports(args.reports)
    records = export_annotations(reports, cfg)
    write_annotations(records, args.out)
    write_sidecar_metadata(
        args.out,
        {
            "tool": "hare-bridge",
            "command": "export-annotations",
            "ner_checkpoint": cfg.ner_checkpoint,
            "re_checkpoint": cfg.re_checkpoint,
            "decoding": DECODING_SCHEME,
            "pair_window": cfg.pair_window,
            "max_length": cfg.max_length,
        },
    )
    print(f"reports={len(records)} entities={sum(len(r.entities) for r in records)}")
    return EXIT_OK


def cmd_export_vectors(args: argparse.Namespace) -> int:
    cfg = BridgeConfig(
        embed_checkpoint=args.embedder,
        device=args.device,
        batch_size=args.batch_size,
        max_length=args.max_length,
    )
    records = read_annotations(args.annotations)
    entries, dim = export_vectors(records, cfg)
    write_vector_store(entries, dim, args.out)
    write_sidecar_metadata(
        args.out,
        {
            "tool": "hare-bridge",
            "command": "export-vectors",
            "embed_checkpoint": cfg.embed_checkpoint,
            "pooling": "mean over non-special subword vectors, renormalized",
            "dim": dim,
        },
    )
    print(f"keys={len(entries)} dim={dim}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bridge",
        description="Run transformer checkpoints over a report corpus and export "
        "annotation and vector-store files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    anns = sub.add_parser("export-annotations", help="predict entities and relations")
    anns.add_argument("--reports", required=True)
    anns.add_argument("--ner", required=True, help="token-classification checkpoint")
    anns.add_argument("--re", required=True, help="pair-classification checkpoint")
    anns.add_argument("--pair-window", type=int, default=240)
    _common_flags(anns)
    anns.set_defaults(func=cmd_export_annotations)

    vecs = sub.add_parser("export-vectors", help="embed unique entity surfaces")
    vecs.add_argument("--annotations", required=True)
    vecs.add_argument("--embedder", required=True, help="encoder checkpoint")
    _common_flags(vecs)
    vecs.set_defaults(func=cmd_export_vectors)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
