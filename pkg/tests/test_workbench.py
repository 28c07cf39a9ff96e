import csv
import json

import pytest

from cifm.errors import DataError, UsageError
from cifm.oracle import make_synthetic_corpus
from cifm.workbench.cli import main
from cifm.workbench.config import build_experiment, config_hash, parse_override, resolve
from cifm.workbench.datasets import export, ingest, read_records
from cifm.workbench.presets import PUBLISHED_HPARAMS, published_preset, resolve_preset
from cifm.workbench.reporting import make_run_dir


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_three_row_tsv(tmp_path):
    p = write(tmp_path / "train.tsv", "text\tlabel\nhello there\tpos\nbad day\tneg\nok\tneu\n")
    recs, kind = read_records(p)
    assert len(recs) == 3 and kind == "classification"
    assert recs[1].target == "neg"


def test_duplicate_header_named(tmp_path):
    p = write(tmp_path / "train.tsv", "text\tlabel\tlabel\na\tb\tc\n")
    with pytest.raises(DataError, match="'label'"):
        read_records(p)


def test_malformed_row_and_missing_column(tmp_path):
    p = write(tmp_path / "a.tsv", "text\tlabel\nfine\tx\nbroken\n")
    with pytest.raises(DataError, match=":3:"):
        read_records(p)
    p = write(tmp_path / "b.csv", "body,label\na,b\n")
    with pytest.raises(DataError, match="text"):
        read_records(p)
    p = write(tmp_path / "c.jsonl", '{"text": "a", "label": "x"}\n{oops\n')
    with pytest.raises(DataError, match=":2:"):
        read_records(p)
    p = write(tmp_path / "d.tsv", "text\tlabel\n")
    with pytest.raises(DataError, match="no rows"):
        read_records(p)


@pytest.mark.parametrize("fmt", ["tsv", "csv", "jsonl"])
@pytest.mark.parametrize("kind", ["noisy", "regression"])
def test_round_trip(tmp_path, fmt, kind):
    ds = make_synthetic_corpus(kind, seed=1, sizes=(40, 10, 10))
    export(ds, tmp_path / "d", fmt)
    back = ingest(tmp_path / "d")
    assert back.train == ds.train and back.val == ds.val and back.test == ds.test
    assert back.label_set == ds.label_set and back.task_kind == ds.task_kind
    export(back, tmp_path / "e", fmt)
    assert ingest(tmp_path / "e").test == ds.test


def test_labels_interned_lexicographically(tmp_path):
    for s in ("train", "val", "test"):
        write(tmp_path / f"{s}.tsv", "text\tlabel\na\tzeta\nb\talpha\nc\tmid\n")
    assert ingest(tmp_path).label_set == ["alpha", "mid", "zeta"]


def test_override_precedence(tmp_path):
    doc = {"preset": "synthetic-noisy+cifm", "train": {"lr": 0.5}}
    merged = resolve(doc, [parse_override("train.epochs=7"), parse_override("cim.epsilon=1")])
    assert merged["train"]["lr"] == 0.5
    assert merged["train"]["epochs"] == 7
    assert merged["cim"]["epsilon"] == 1
    assert merged["dataset"]["synthetic"] == "noisy"
    exp = build_experiment(merged)
    assert exp.objective.cim.epsilon == 1
    assert config_hash(merged) == exp.hash


def test_schema_rejects_unknown_keys():
    with pytest.raises(UsageError, match="objective"):
        resolve({"objective": {"betta": 1}})
    with pytest.raises(UsageError):
        resolve({"cim": {"epsilon": -1}})
    with pytest.raises(UsageError):
        resolve({"preset": "nonsense+cifm"})


def test_published_presets():
    assert len(PUBLISHED_HPARAMS["bert"]) == 10 and len(PUBLISHED_HPARAMS["roberta"]) == 13
    p = published_preset("roberta", "HatEval")
    assert p["objective"]["beta"] == 10 and p["cim"]["epsilon"] == 0.1
    frag = resolve_preset("roberta/STS-B")
    assert frag["objective"]["task_kind"] == "regression"


def test_run_dirs_never_overwrite(tmp_path):
    a = make_run_dir(tmp_path, "train", "abcdef0123456789")
    b = make_run_dir(tmp_path, "train", "abcdef0123456789")
    assert a.name == "train-abcdef012345" and b.name == "train-abcdef012345-1"


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["train", "--preset", "synthetic-noisy+cifm", "objective.beta=-1",
                 "--output-dir", str(tmp_path)]) == 2
    assert main(["train", "--preset", "synthetic-noisy+cifm", "bogus.key=1", "--output-dir", str(tmp_path)]) == 2
    assert main(["sweep", "--preset", "synthetic-noisy+ce", "--output-dir", str(tmp_path)]) == 2


def test_cli_train_evaluate_sweep(tmp_path):
    common = ["--preset", "synthetic-separable+cifm", "--output-dir", str(tmp_path), "train.epochs=3", "train.patience=2",
              "train.seeds=[0]", "dataset.sizes=[90,30,30]", "model.dim=16", "model.vocab_size=2000"]
    assert main(["train", *common]) == 0
    run = next(tmp_path.glob("train-*"))
    summary = json.loads((run / "summary.json").read_text())
    assert summary["config_hash"] and summary["code_version"] and summary["seeds"] == [0]
    assert (run / "training_curves.png").stat().st_size > 0
    assert (run / "log.jsonl").read_text().strip()
    ckpt = run / "checkpoints" / "seed-0.zip"
    assert ckpt.exists()

    assert main(["evaluate", *common, "--checkpoint", str(ckpt)]) == 0
    ev = json.loads((next(tmp_path.glob("evaluate-*")) / "summary.json").read_text())
    assert ev["matches_stored"] is True

    assert main(["sweep", *common, "--checkpoint", str(ckpt), "eval.sweep.strengths=[0,1,2]",
                 "eval.sweep.seeds=[0,1]"]) == 0
    sweep_dir = next(tmp_path.glob("sweep-*"))
    rows = list(csv.DictReader(open(sweep_dir / "robustness.csv")))
    assert len(rows) == 6
    assert (sweep_dir / "robustness.png").exists()

    # a bare checkpoint reuses its training config
    bare = tmp_path / "bare"
    assert main(["evaluate", "--checkpoint", str(ckpt), "--output-dir", str(bare)]) == 0
    assert json.loads((next(bare.glob("evaluate-*")) / "summary.json").read_text())["matches_stored"] is True


def test_cli_export(tmp_path):
    out = tmp_path / "corpus"
    assert main(["export", "--preset", "synthetic-xor+ce", "--to", str(out), "--format", "jsonl",
                 "--output-dir", str(tmp_path)]) == 0
    assert ingest(out).name == "synthetic-xor"
