import json
import math

import pytest

torch = pytest.importorskip("torch")
transformers = pytest.importorskip("transformers")

from transformers import (
    BertConfig,
    BertForSequenceClassification,
    BertForTokenClassification,
    BertModel,
    BertTokenizerFast,
)

from hare_bridge import (
    AnnotationRecord,
    BridgeConfig,
    export_annotations,
    export_vectors,
    normalize_key,
    read_reports,
)
from hare_bridge.cli import main

ENTITY_LABELS = (
    "anatomical_site",
    "ihc_marker",
    "pathological_diagnosis",
    "diagnosis_descriptor",
    "ihc_modifier",
)

WORDS = [
    "specimen", "from", "the", "breast", "lung", "lymph", "node", "shows",
    "cd20", "cd30", "er", "ki", "strong", "weak", "patchy", "diffuse",
    "positive", "in", "tumour", "cells", "consistent", "with", "carcinoma",
    "lymphoma", "adenocarcinoma", "invasive", "ductal", "classical",
    "hodgkin", "no", "entities", "here", "of", "and",
]
SUBWORDS = [f"##{c}" for c in "abcdefghijklmnopqrstuvwxyz0123456789-"]
CHARS = list("abcdefghijklmnopqrstuvwxyz0123456789.,-")


def _write_vocab(path):
    tokens = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[E1]", "[/E1]", "[E2]", "[/E2]"]
    tokens += WORDS + SUBWORDS + CHARS
    path.write_text("\n".join(tokens) + "\n")
    return tokens


def _save_tokenizer(directory, vocab_path):
    tokenizer = BertTokenizerFast(vocab_file=str(vocab_path), do_lower_case=True)
    tokenizer.save_pretrained(str(directory))
    return tokenizer


def _tiny_config(tokenizer, **labels):
    return BertConfig(
        vocab_size=tokenizer.vocab_size,
        hidden_size=32,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=48,
        max_position_embeddings=512,
        **labels,
    )


@pytest.fixture(scope="session")
def checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("checkpoints")
    vocab = root / "vocab.txt"
    _write_vocab(vocab)

    ner_labels = ["O"]
    for label in ENTITY_LABELS:
        ner_labels += [f"B-{label}", f"I-{label}"]
    ner_dir = root / "ner"
    tokenizer = _save_tokenizer(ner_dir, vocab)
    torch.manual_seed(0)
    BertForTokenClassification(
        _tiny_config(
            tokenizer,
            num_labels=len(ner_labels),
            id2label=dict(enumerate(ner_labels)),
            label2id={l: i for i, l in enumerate(ner_labels)},
        )
    ).save_pretrained(str(ner_dir))

    re_labels = ["NEGATIVE", "ihc_marker-ihc_modifier", "diagnosis-diagnosis_descriptor"]
    re_dir = root / "re"
    _save_tokenizer(re_dir, vocab)
    torch.manual_seed(1)
    BertForSequenceClassification(
        _tiny_config(
            tokenizer,
            num_labels=len(re_labels),
            id2label=dict(enumerate(re_labels)),
            label2id={l: i for i, l in enumerate(re_labels)},
        )
    ).save_pretrained(str(re_dir))

    embed_dir = root / "embed"
    _save_tokenizer(embed_dir, vocab)
    torch.manual_seed(2)
    BertModel(_tiny_config(tokenizer)).save_pretrained(str(embed_dir))

    # a token classifier whose bias pins every token to "O"
    silent_dir = root / "ner_silent"
    _save_tokenizer(silent_dir, vocab)
    torch.manual_seed(3)
    silent = BertForTokenClassification(
        _tiny_config(
            tokenizer,
            num_labels=len(ner_labels),
            id2label=dict(enumerate(ner_labels)),
            label2id={l: i for i, l in enumerate(ner_labels)},
        )
    )
    with torch.no_grad():
        silent.classifier.weight.zero_()
        silent.classifier.bias.fill_(-10.0)
        silent.classifier.bias[0] = 10.0
    silent.save_pretrained(str(silent_dir))

    return {"ner": str(ner_dir), "re": str(re_dir), "embed": str(embed_dir), "silent": str(silent_dir)}


SAMPLE_TEXTS = [
    "Specimen from the breast shows invasive ductal carcinoma.",
    "CD20 strong and CD30 patchy in tumour cells.",
    "Lymph node consistent with classical Hodgkin lymphoma.",
    "ER weak in lung. Ki-67 diffuse positive in tumour cells.",
    "No entities here.",
]


@pytest.fixture
def sample_reports(tmp_path):
    path = tmp_path / "reports.jsonl"
    path.write_text(
        "".join(json.dumps({"id": f"b{i}", "text": t}) + "\n" for i, t in enumerate(SAMPLE_TEXTS))
    )
    return path


def _core_validate(annotations_path, reports_path):
    # the scoring toolkit is the consumer of record for these files; its
    # loader rejects bad spans, labels, confidences, and indices
    from hare_eval.corpus import load_annotations, load_reports

    reports = load_reports(reports_path)
    return load_annotations(annotations_path, source="predicted", reports=reports)


class TestExportAnnotations:
    def test_roundtrip_through_consumer_loader(self, checkpoints, sample_reports, tmp_path, capsys):
        out = tmp_path / "annotations.jsonl"
        code = main([
            "export-annotations", "--reports", str(sample_reports),
            "--ner", checkpoints["ner"], "--re", checkpoints["re"], "--out", str(out),
        ])
        assert code == 0
        assert "reports=5" in capsys.readouterr().out
        loaded = _core_validate(out, sample_reports)
        assert sorted(loaded) == [f"b{i}" for i in range(5)]
        for annots in loaded.values():
            for e in annots.entities:
                assert 0.0 <= e.confidence <= 1.0
            for r in annots.relations:
                assert 0.0 <= r.confidence <= 1.0
        meta = json.loads((tmp_path / "annotations.jsonl.meta.json").read_text())
        assert "decoding" in meta

    def test_silent_model_emits_empty_lists(self, checkpoints, sample_reports, tmp_path):
        out = tmp_path / "empty.jsonl"
        code = main([
            "export-annotations", "--reports", str(sample_reports),
            "--ner", checkpoints["silent"], "--re", checkpoints["re"], "--out", str(out),
        ])
        assert code == 0
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(records) == 5
        assert all(r["entities"] == [] and r["relations"] == [] for r in records)
        _core_validate(out, sample_reports)

    def test_long_report_is_chunked(self, checkpoints, tmp_path):
        text = " ".join(["cd20 strong in tumour cells"] * 300)
        rp = tmp_path / "long.jsonl"
        rp.write_text(json.dumps({"id": "long", "text": text}) + "\n")
        out = tmp_path / "long_out.jsonl"
        code = main([
            "export-annotations", "--reports", str(rp),
            "--ner", checkpoints["ner"], "--re", checkpoints["re"],
            "--max-length", "64", "--out", str(out),
        ])
        assert code == 0
        _core_validate(out, rp)

    def test_missing_checkpoint_exits_nonzero(self, checkpoints, sample_reports, tmp_path):
        code = main([
            "export-annotations", "--reports", str(sample_reports),
            "--ner", str(tmp_path / "nope"), "--re", checkpoints["re"],
            "--out", str(tmp_path / "x.jsonl"),
        ])
        assert code == 2

    def test_rerun_identical(self, checkpoints, sample_reports, tmp_path):
        outs = []
        for name in ("a.jsonl", "b.jsonl"):
            out = tmp_path / name
            assert main([
                "export-annotations", "--reports", str(sample_reports),
                "--ner", checkpoints["ner"], "--re", checkpoints["re"], "--out", str(out),
            ]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


def _annotations_with_surfaces(tmp_path, surfaces):
    path = tmp_path / "gold_like.jsonl"
    entities = []
    pos = 0
    for s in surfaces:
        entities.append(
            {"start": pos, "end": pos + len(s), "label": "ihc_marker", "surface": s, "confidence": 0.9}
        )
        pos += len(s) + 1
    path.write_text(json.dumps({"report_id": "v1", "entities": entities, "relations": []}) + "\n")
    return path


class TestExportVectors:
    def test_store_loads_with_unit_norms(self, checkpoints, tmp_path, capsys):
        surfaces = [f"cd{k} strong" for k in range(10)]
        ap = _annotations_with_surfaces(tmp_path, surfaces)
        out = tmp_path / "store.txt"
        code = main([
            "export-vectors", "--annotations", str(ap),
            "--embedder", checkpoints["embed"], "--out", str(out),
        ])
        assert code == 0
        assert "keys=10 dim=32" in capsys.readouterr().out
        from hare_eval.embed import VectorStore

        store = VectorStore.load(str(out))
        assert store.dim == 32
        assert len(store.entries) == 10
        for surface in surfaces:
            vec = store.lookup(surface)
            assert math.isclose(float(sum(v * v for v in vec)) ** 0.5, 1.0, abs_tol=1e-5)

    def test_duplicate_surfaces_collapse_to_one_key(self, checkpoints, tmp_path):
        ap = _annotations_with_surfaces(tmp_path, ["CD20", "cd20", " cd20 "])
        out = tmp_path / "store.txt"
        assert main([
            "export-vectors", "--annotations", str(ap),
            "--embedder", checkpoints["embed"], "--out", str(out),
        ]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "dim=32"
        assert len(lines) == 2
        assert lines[1].split("\t")[0] == normalize_key("CD20")

    def test_empty_annotations_give_header_only(self, checkpoints, tmp_path):
        ap = tmp_path / "empty.jsonl"
        ap.write_text(json.dumps({"report_id": "v1", "entities": [], "relations": []}) + "\n")
        out = tmp_path / "store.txt"
        assert main([
            "export-vectors", "--annotations", str(ap),
            "--embedder", checkpoints["embed"], "--out", str(out),
        ]) == 0
        assert out.read_text() == "dim=32\n"

    def test_rerun_identical(self, checkpoints, tmp_path):
        ap = _annotations_with_surfaces(tmp_path, ["cd20", "er weak", "breast"])
        dumps = []
        for name in ("s1.txt", "s2.txt"):
            out = tmp_path / name
            assert main([
                "export-vectors", "--annotations", str(ap),
                "--embedder", checkpoints["embed"], "--out", str(out),
            ]) == 0
            dumps.append(out.read_bytes())
        assert dumps[0] == dumps[1]


class TestLibraryApi:
    def test_export_annotations_in_process(self, checkpoints, sample_reports):
        reports = read_reports(sample_reports)
        cfg = BridgeConfig(ner_checkpoint=checkpoints["ner"], re_checkpoint=checkpoints["re"])
        records = export_annotations(reports, cfg)
        assert [r.report_id for r in records] == [f"b{i}" for i in range(5)]
        for record in records:
            n = len(record.entities)
            for rel in record.relations:
                assert 0 <= rel["head"] < n
                assert 0 <= rel["tail"] < n
                assert rel["head"] != rel["tail"]

    def test_export_vectors_dim_matches_hidden_size(self, checkpoints):
        records = [
            AnnotationRecord(
                report_id="x",
                entities=[{"start": 0, "end": 4, "label": "ihc_marker", "surface": "cd20"}],
            )
        ]
        entries, dim = export_vectors(records, BridgeConfig(embed_checkpoint=checkpoints["embed"]))
        assert dim == 32
        assert set(entries) == {"cd20"}
