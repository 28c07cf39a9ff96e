"""Dataset ingestion and export: delimited text or line-JSON with ``text`` and ``label``/``score``."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..data import Dataset, Record
from ..errors import DataError, UsageError
from ..metrics import METRIC_NAMES
from ..oracle import TaxonomyPair, make_synthetic_corpus
from .presets import BENCHMARKS

SPLITS = ("train", "val", "test")
FORMATS = ("tsv", "csv", "jsonl")


@dataclass
class DatasetManifest:
    name: str
    task_kind: str
    splits: dict[str, str]
    labels: list[str] | None = None
    target_dim: int = 1
    metrics: list[str] = field(default_factory=lambda: ["macro_f1"])
    metric_options: dict = field(default_factory=dict)
    format: str | None = None

    def validate(self) -> None:
        missing = [s for s in SPLITS if s not in self.splits]
        if missing:
            raise DataError(f"manifest {self.name!r} lacks splits {missing}")
        paths = [str(Path(p).resolve()) for p in self.splits.values()]
        if len(set(paths)) != len(paths):
            raise DataError("splits must point at distinct files")
        bad = [m for m in self.metrics if m not in METRIC_NAMES]
        if bad:
            raise DataError(f"unknown metrics {bad}; registry has {list(METRIC_NAMES)}")


def _guess_format(path: Path) -> str:
    ext = path.suffix.lstrip(".").lower()
    if ext in FORMATS:
        return ext
    raise UsageError(f"cannot infer format of {path}; pass one of {FORMATS}")


def _parse_score(raw, where: str) -> tuple[float, ...]:
    try:
        if isinstance(raw, (list, tuple)):
            return tuple(float(v) for v in raw)
        if isinstance(raw, str) and "," in raw:
            return tuple(float(v) for v in raw.split(","))
        return (float(raw),)
    except (TypeError, ValueError):
        raise DataError(f"{where}: score {raw!r} is not numeric") from None


def read_records(path: str | Path, fmt: str | None = None) -> tuple[list[Record], str]:
    """Parse one split file. Returns (records, task_kind inferred from the label column)."""
    path = Path(path)
    fmt = fmt or _guess_format(path)
    if fmt not in FORMATS:
        raise UsageError(f"unknown format {fmt!r}")
    text = path.read_text(encoding="utf-8")
    rows: list[tuple[int, dict]] = []
    if fmt == "jsonl":
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected an object")
            rows.append((lineno, obj))
    else:
        delim = "\t" if fmt == "tsv" else ","
        reader = csv.reader(io.StringIO(text), delimiter=delim)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        dupes = sorted({h for h in header if header.count(h) > 1})
        if dupes:
            raise DataError(f"{path}: duplicate header {dupes[0]!r}")
        for lineno, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}")
            rows.append((lineno, dict(zip(header, fields))))
    if not rows:
        raise DataError(f"{path}: split has no rows")

    keys = set(rows[0][1])
    if "text" not in keys:
        raise DataError(f"{path}: missing column 'text'")
    if "label" in keys:
        kind = "classification"
    elif "score" in keys:
        kind = "regression"
    else:
        raise DataError(f"{path}: missing column 'label' (or 'score' for regression)")
    records = []
    for lineno, row in rows:
        where = f"{path}:{lineno}"
        if "text" not in row or (kind == "classification" and "label" not in row) or (kind == "regression" and "score" not in row):
            raise DataError(f"{where}: missing field")
        if kind == "classification":
            records.append(Record(str(row["text"]), str(row["label"])))
        else:
            records.append(Record(str(row["text"]), _parse_score(row["score"], where)))
    return records, kind


def ingest(path: str | Path, fmt: str | None = None, *, name: str | None = None, metrics: list[str] | None = None) -> Dataset:
    """Load a dataset from a directory of ``{train,val,test}.<fmt>`` files or a manifest (yaml/json)."""
    path = Path(path)
    if path.is_dir():
        fmt = fmt or next((f for f in FORMATS if (path / f"train.{f}").exists()), None)
        if fmt is None:
            raise DataError(f"{path}: no train.tsv/train.csv/train.jsonl found")
        manifest = DatasetManifest(name or path.name, "", {s: str(path / f"{s}.{fmt}") for s in SPLITS}, format=fmt)
        if (path / "manifest.yaml").exists():
            manifest = load_manifest(path / "manifest.yaml")
    else:
        manifest = load_manifest(path)
    manifest.validate()
    splits, kinds = {}, set()
    for s in SPLITS:
        recs, kind = read_records(manifest.splits[s], manifest.format or fmt)
        splits[s] = recs
        kinds.add(kind)
    if len(kinds) != 1:
        raise DataError("splits disagree on label vs score columns")
    kind = kinds.pop()
    if manifest.task_kind and manifest.task_kind != kind:
        raise DataError(f"manifest says {manifest.task_kind} but files carry {kind} targets")
    if kind == "classification":
        labels = manifest.labels or sorted({r.target for recs in splits.values() for r in recs})
        metric_names = metrics or manifest.metrics
        target_dim = 1
    else:
        labels = None
        dims = {len(r.target) for recs in splits.values() for r in recs}
        if len(dims) != 1:
            raise DataError("regression targets have inconsistent dimensionality")
        target_dim = dims.pop()
        metric_names = metrics or (manifest.metrics if manifest.metrics != ["macro_f1"] else ["pearson", "spearman"])
    return Dataset(manifest.name, kind, splits["train"], splits["val"], splits["test"], label_set=labels,
                   target_dim=target_dim, metrics=list(metric_names), metric_options=dict(manifest.metric_options))


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    base = path.parent
    try:
        splits = {k: str((base / v) if not Path(v).is_absolute() else Path(v)) for k, v in doc["splits"].items()}
        bench = BENCHMARKS.get(doc.get("benchmark", ""), {})
        return DatasetManifest(
            name=doc.get("name", path.stem), task_kind=doc.get("task_kind", bench.get("task_kind", "")), splits=splits,
            labels=doc.get("labels"), target_dim=doc.get("target_dim", bench.get("target_dim", 1)),
            metrics=doc.get("metrics", bench.get("metrics", ["macro_f1"])),
            metric_options=doc.get("metric_options", bench.get("metric_options", {})), format=doc.get("format"))
    except KeyError as exc:
        raise DataError(f"{path}: manifest missing key {exc.args[0]!r}") from None


def export(dataset: Dataset, directory: str | Path, fmt: str = "tsv") -> Path:
    """Write the three splits plus a manifest; ``ingest`` of the result reproduces the records."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for s in SPLITS:
        recs = dataset.split(s)
        target_key = "label" if dataset.task_kind == "classification" else "score"

        def value(r):
            if dataset.task_kind == "classification":
                return r.target
            return list(r.target) if fmt == "jsonl" else ",".join(repr(v) for v in r.target)

        out = directory / f"{s}.{fmt}"
        if fmt == "jsonl":
            out.write_text("".join(json.dumps({"text": r.text, target_key: value(r)}) + "\n" for r in recs), encoding="utf-8")
        else:
            buf = io.StringIO()
            w = csv.writer(buf, delimiter="\t" if fmt == "tsv" else ",", lineterminator="\n")
            w.writerow(["text", target_key])
            for r in recs:
                w.writerow([r.text, value(r)])
            out.write_text(buf.getvalue(), encoding="utf-8")
    manifest = {"name": dataset.name, "task_kind": dataset.task_kind, "format": fmt,
                "splits": {s: f"{s}.{fmt}" for s in SPLITS}, "labels": dataset.label_set,
                "target_dim": dataset.target_dim, "metrics": dataset.metrics,
                "metric_options": dataset.metric_options}
    (directory / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=False), encoding="utf-8")
    return directory


def split_counts(dataset: Dataset) -> dict[str, int]:
    return {s: len(dataset.split(s)) for s in SPLITS}


def load_dataset(section: dict):
    """Dataset from a config ``dataset`` section (synthetic kind or on-disk path)."""
    if "synthetic" in section:
        sizes = tuple(section["sizes"]) if "sizes" in section else None
        ds = make_synthetic_corpus(section["synthetic"], seed=section.get("seed", 0), sizes=sizes)
        if isinstance(ds, TaxonomyPair):
            return ds.target if section.get("side", "source") == "target" else ds.source
        return ds
    if "path" in section:
        metrics = None
        bench = section.get("benchmark")
        if bench in BENCHMARKS:
            metrics = BENCHMARKS[bench]["metrics"]
        ds = ingest(section["path"], section.get("format"), metrics=metrics)
        if bench in BENCHMARKS and "metric_options" in BENCHMARKS[bench] and not ds.metric_options:
            ds.metric_options = dict(BENCHMARKS[bench]["metric_options"])
        return ds
    raise UsageError("dataset section needs 'synthetic' or 'path'")
