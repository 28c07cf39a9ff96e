"""Command-line entry point: ``cifm <command> [--config FILE] [--preset NAME] [key.path=value ...]``.

Exit codes: 0 success, 2 usage or config error, 3 data error, 4 aborted run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import zipfile
from pathlib import Path

from .. import __version__
from ..data import Dataset, HashingTokenizer, encode_records
from ..encoder import MANIFEST_NAME, load_checkpoint, save_checkpoint
from ..errors import ConfigError, DataError, NumericError, UsageError
from ..evalharness import SweepSpec, TransferSpec, ood_eval, robustness_sweep, subsample_protocol, transfer_probe
from ..metrics import paired_t_test, seed_statistics
from ..oracle import TaxonomyPair, make_synthetic_corpus
from ..trainer import evaluate_split, train
from . import plotting
from .config import build_experiment, config_hash, load_document, parse_override, resolve
from .datasets import export, ingest, load_dataset
from .presets import METHODS
from .reporting import RunWriter, epoch_rows, make_run_dir

log = logging.getLogger("cifm")

COMMANDS = ("train", "evaluate", "sweep", "transfer", "ood", "subsample", "compare", "export")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cifm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML or JSON experiment document")
        s.add_argument("--preset", help="e.g. synthetic-noisy+cifm or roberta/HatEval")
        s.add_argument("--output-dir", help="parent directory for run folders")
        s.add_argument("--checkpoint", help="checkpoint archive to load")
        s.add_argument("-v", "--verbose", action="store_true")
        s.add_argument("overrides", nargs="*", metavar="key.path=value")
        if name == "compare":
            s.add_argument("--methods", default="ce,cifm", help="comma-separated method presets")
        if name == "export":
            s.add_argument("--format", default="tsv", choices=["tsv", "csv", "jsonl"])
            s.add_argument("--to", required=True, help="destination directory")
    return p


def _stored_config(path) -> dict:
    """Config saved inside a training checkpoint, minus run-location keys."""
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read(MANIFEST_NAME))
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError):
        return {}
    doc = dict(manifest.get("extra", {}).get("config") or {})
    for key in ("output_dir", "checkpoint", "preset"):
        doc.pop(key, None)
    return doc


def _experiment(args):
    doc = load_document(args.config)
    # a bare --checkpoint reuses the config it was trained with
    if args.checkpoint and not args.config and not args.preset:
        doc = _stored_config(args.checkpoint)
    overrides = [parse_override(t) for t in args.overrides]
    if args.preset:
        overrides.insert(0, ("preset", args.preset))
    if args.output_dir:
        overrides.append(("output_dir", args.output_dir))
    if args.checkpoint:
        overrides.append(("checkpoint", args.checkpoint))
    return build_experiment(resolve(doc, overrides))


def _dataset(exp) -> Dataset:
    if not exp.dataset:
        raise UsageError("config has no dataset section")
    ds = load_dataset(exp.dataset)
    if ds.task_kind != exp.objective.task_kind:
        exp.objective.task_kind = ds.task_kind
    return ds


def _tokenizer(exp) -> HashingTokenizer:
    return HashingTokenizer(exp.model.vocab_size, exp.model.vocab_seed, exp.train.max_length)


def _writer(exp, command: str) -> RunWriter:
    run_dir = make_run_dir(exp.output_dir, command, exp.hash)
    return RunWriter(run_dir, command, exp.raw, exp.hash)


def _load_model(exp):
    if not exp.checkpoint:
        raise UsageError("this command needs --checkpoint (or checkpoint: in the config)")
    if not Path(exp.checkpoint).exists():
        raise UsageError(f"checkpoint {exp.checkpoint} not found")
    return load_checkpoint(exp.checkpoint)


def _train_runs(exp, ds, writer, tag: str = ""):
    runs = []
    tok = _tokenizer(exp)
    for seed in exp.train.seeds:
        def on_step(step, entry, seed=seed):
            if step % 50 == 0:
                writer.log("step", seed=seed, step=step, method=tag or None, **entry)

        rec = train(lambda: exp.model.build(ds.num_outputs, exp.train.max_length), ds, exp.objective, exp.train,
                    seed=seed, tokenizer=tok, step_callback=on_step)
        writer.log("run_end", seed=seed, method=tag or None, best_epoch=rec.best_epoch, test_metric=rec.test_metric,
                   wall_clock=rec.wall_clock, cim_steps=rec.cim_steps)
        runs.append(rec)
    return runs


def _aggregate(runs) -> dict:
    out = {"score": seed_statistics([r.test_metric for r in runs])}
    for name in runs[0].test_report["values"]:
        out[name] = seed_statistics([r.test_report["values"][name] for r in runs])
    return out


def cmd_train(exp, args) -> RunWriter:
    ds = _dataset(exp)
    w = _writer(exp, "train")
    runs = _train_runs(exp, ds, w)
    ckpt_dir = w.dir / "checkpoints"
    tok = _tokenizer(exp)
    for r in runs:
        save_checkpoint(ckpt_dir / f"seed-{r.seed}.zip", r.model, tokenizer_manifest=tok.manifest(),
                        extra={"seed": r.seed, "config_hash": exp.hash, "config": exp.raw, "label_set": ds.label_set,
                               "test_metric": r.test_metric, "test_report": r.test_report})
    rows = epoch_rows(runs)
    w.write_csv("epochs.csv", rows)
    plotting.training_curves(rows, w.dir / "training_curves.png")
    w.write_csv("runs.csv", [{"seed": r.seed, "best_epoch": r.best_epoch, "test_metric": r.test_metric,
                              "wall_clock": r.wall_clock, **r.test_report["values"]} for r in runs])
    w.summary({"dataset": ds.name, "aggregate": _aggregate(runs),
               "runs": [r.to_dict() | {"step_losses": None} for r in runs]}, seeds=list(exp.train.seeds))
    return w


def cmd_evaluate(exp, args) -> RunWriter:
    model, manifest = _load_model(exp)
    ds = _dataset(exp)
    tok = HashingTokenizer(**{k: v for k, v in manifest["tokenizer"].items() if k != "kind"}) if manifest["tokenizer"] else _tokenizer(exp)
    report = evaluate_split(model, ds, encode_records(ds.test, ds, tok), quality=True,
                            batch_size=exp.train.eval_batch_size)
    w = _writer(exp, "evaluate")
    stored = manifest.get("extra", {}).get("test_metric")
    w.write_csv("metrics.csv", [{"metric": k, "value": v} for k, v in report.values.items()])
    w.summary({"dataset": ds.name, "checkpoint": str(exp.checkpoint), "report": report.to_dict(),
               "score": report.score, "stored_test_metric": stored,
               "matches_stored": None if stored is None else stored == report.score},
              seeds=[manifest.get("extra", {}).get("seed")])
    return w


def cmd_sweep(exp, args) -> RunWriter:
    model, manifest = _load_model(exp)
    ds = _dataset(exp)
    spec = SweepSpec(**exp.eval.get("sweep", {}))
    curve = robustness_sweep(model, ds, spec, tokenizer=_tokenizer(exp))
    w = _writer(exp, "sweep")
    w.write_csv("robustness.csv", curve.rows(), ["strength", "seed", "metric", "value"])
    plotting.robustness_curves({ds.name: curve.to_dict()}, w.dir / "robustness.png")
    w.summary({"dataset": ds.name, "curve": curve.to_dict()}, seeds=list(spec.seeds))
    return w


def cmd_transfer(exp, args) -> RunWriter:
    model, _ = _load_model(exp)
    section = dict(exp.eval.get("transfer", {}))
    targets = [load_dataset(t) for t in section.pop("targets", [])]
    if not targets:
        raise UsageError("eval.transfer.targets is empty")
    spec = TransferSpec(**section)
    rep = transfer_probe(model, targets, spec, tokenizer=_tokenizer(exp))
    w = _writer(exp, "transfer")
    w.write_csv("transfer.csv", [{"dataset": k, "probe": spec.probe, "score": v.score} for k, v in rep.per_dataset.items()])
    plotting.transfer_bars({k: v.score for k, v in rep.per_dataset.items()} | {"average": rep.average},
                           w.dir / "transfer.png")
    w.summary(rep.to_dict(), seeds=[spec.seed])
    return w


def cmd_ood(exp, args) -> RunWriter:
    model, manifest = _load_model(exp)
    section = exp.eval.get("ood", {})
    source_labels = manifest.get("extra", {}).get("label_set")
    if "target" in section:
        target = load_dataset(section["target"])
        label_map = section.get("label_map")
    else:
        pair = make_synthetic_corpus("taxonomy-pair", seed=exp.dataset.get("seed", 0))
        target, label_map = pair.target, section.get("label_map", pair.label_map)
        source_labels = source_labels or pair.source.label_set
    if not label_map:
        raise UsageError("eval.ood.label_map is required for this target")
    report = ood_eval(model, source_labels, target, label_map, tokenizer=_tokenizer(exp))
    w = _writer(exp, "ood")
    w.write_csv("ood.csv", [{"metric": k, "value": v} for k, v in report.values.items()])
    w.summary({"target": target.name, "report": report.to_dict()})
    return w


def cmd_subsample(exp, args) -> RunWriter:
    ds = _dataset(exp)
    section = exp.eval.get("subsample", {})
    ratios = section.get("ratios", [0.1, 0.25, 0.5, 1.0])
    subsets = subsample_protocol(ds.train, ratios, exp.train.seeds, stratified=section.get("stratified", False))
    w = _writer(exp, "subsample")
    rows = []
    for sub in subsets:
        rec = train(lambda: exp.model.build(ds.num_outputs, exp.train.max_length), ds.with_train(sub.records),
                    exp.objective, exp.train, seed=sub.seed, tokenizer=_tokenizer(exp))
        rows.append({"ratio": sub.ratio, "seed": sub.seed, "n_train": len(sub.records), "score": rec.test_metric})
        w.log("subset_end", seed=sub.seed, ratio=sub.ratio, score=rec.test_metric)
    w.write_csv("subsample.csv", rows)
    by_ratio = {r: seed_statistics([x["score"] for x in rows if x["ratio"] == r]) for r in ratios}
    w.summary({"dataset": ds.name, "by_ratio": {str(k): v for k, v in by_ratio.items()}}, seeds=list(exp.train.seeds))
    return w


def cmd_compare(exp, args) -> RunWriter:
    ds = _dataset(exp)
    names = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in names if m not in METHODS]
    if unknown or len(names) < 2:
        raise UsageError(f"--methods needs two or more of {sorted(METHODS)}")
    w = _writer(exp, "compare")
    results = {}
    for m in names:
        doc = dict(exp.raw)
        doc["objective"] = {**doc.get("objective", {}), **METHODS[m]["objective"]}
        doc["cim"] = {**(doc.get("cim") or {}), **METHODS[m]["cim"]} if METHODS[m]["cim"] else None
        sub = build_experiment(resolve(doc))
        results[m] = _train_runs(sub, ds, w, tag=m)
    base = names[0]
    rows, tests = [], {}
    for m, runs in results.items():
        for r in runs:
            rows.append({"method": m, "seed": r.seed, "score": r.test_metric,
                         "uniformity": r.test_report["values"].get("uniformity"),
                         "ari": r.test_report["values"].get("ari")})
        if m != base:
            t = paired_t_test([r.test_metric for r in runs], [r.test_metric for r in results[base]])
            tests[f"{m}-vs-{base}"] = {"p_value": t.p_value, "statistic": t.statistic, "degenerate": t.degenerate}
    w.write_csv("compare.csv", rows)
    agg = {m: _aggregate(runs) for m, runs in results.items()}
    if all("uniformity" in a and "ari" in a for a in agg.values()):
        plotting.uniformity_vs_ari({m: (a["uniformity"]["mean"], a["ari"]["mean"]) for m, a in agg.items()},
                                   w.dir / "uniformity_vs_ari.png")
    w.summary({"dataset": ds.name, "aggregate": agg, "paired_t_test": tests}, seeds=list(exp.train.seeds))
    return w


def cmd_export(exp, args) -> RunWriter | None:
    if "synthetic" in exp.dataset:
        sizes = tuple(exp.dataset["sizes"]) if "sizes" in exp.dataset else None
        ds = make_synthetic_corpus(exp.dataset["synthetic"], seed=exp.dataset.get("seed", 0), sizes=sizes)
        parts = {"source": ds.source, "target": ds.target} if isinstance(ds, TaxonomyPair) else {"": ds}
    else:
        parts = {"": ingest(exp.dataset["path"], exp.dataset.get("format"))}
    for key, d in parts.items():
        out = export(d, Path(args.to) / key if key else Path(args.to), args.format)
        print(out)
    return None


HANDLERS = {"train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep, "transfer": cmd_transfer,
            "ood": cmd_ood, "subsample": cmd_subsample, "compare": cmd_compare, "export": cmd_export}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args, extra = parser.parse_known_args(argv)
        stray = [t for t in extra if t.startswith("-") or "=" not in t]
        if stray:
            parser.error(f"unrecognized arguments: {' '.join(stray)}")
    except SystemExit as exc:
        return int(exc.code or 0)
    # overrides may sit between options, where argparse leaves them unparsed
    args.overrides = list(args.overrides) + extra
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    writer = None
    try:
        exp = _experiment(args)
        writer = HANDLERS[args.command](exp, args)
    except (UsageError, ConfigError) as exc:
        print(f"cifm: error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"cifm: data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"cifm: run aborted: {exc}", file=sys.stderr)
        return 4
    finally:
        if writer is not None:
            writer.close()
    if writer is not None:
        print(writer.dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
