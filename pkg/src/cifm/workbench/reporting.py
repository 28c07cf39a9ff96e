"""Run directories and report files.

Every command writes to ``<output_dir>/<command>-<hash12>``; an existing
directory is never overwritten, a ``-1``, ``-2``... suffix is added instead.
"""

from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path
from typing import Any, Iterable

from .. import __version__


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):
        return _jsonable(obj.item())
    return obj


def make_run_dir(output_dir: str | Path, command: str, config_hash: str) -> Path:
    base = Path(output_dir)
    base.mkdir(parents=True, exist_ok=True)
    stem = f"{command}-{config_hash[:12]}"
    path, n = base / stem, 0
    while path.exists():
        n += 1
        path = base / f"{stem}-{n}"
    path.mkdir()
    return path


class RunWriter:
    """Writes the artifacts of one command invocation into its run directory."""

    def __init__(self, run_dir: Path, command: str, config: dict, config_hash: str):
        self.dir = Path(run_dir)
        self.command = command
        self.config = config
        self.config_hash = config_hash
        self._log = open(self.dir / "log.jsonl", "a", encoding="utf-8")
        self.write_json("config.json", config)

    def header(self, seed: int | None = None) -> dict:
        return {"command": self.command, "config_hash": self.config_hash, "code_version": __version__, "seed": seed}

    def log(self, event: str, seed: int | None = None, **fields) -> None:
        entry = {"time": round(time.time(), 3), "event": event, **self.header(seed), **fields}
        self._log.write(json.dumps(_jsonable(entry), sort_keys=True) + "\n")
        self._log.flush()

    def write_json(self, name: str, payload: Any) -> Path:
        path = self.dir / name
        path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def write_csv(self, name: str, rows: Iterable[dict], columns: list[str] | None = None) -> Path:
        rows = list(rows)
        columns = columns or (list(rows[0]) if rows else [])
        path = self.dir / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: r.get(k) for k in columns})
        return path

    def summary(self, payload: dict, seeds: list[int] | None = None, text: str | None = None) -> Path:
        doc = {**self.header(), "seeds": seeds, **payload}
        path = self.write_json("summary.json", doc)
        (self.dir / "summary.txt").write_text((text or render_text(doc)) + "\n", encoding="utf-8")
        return path

    def close(self) -> None:
        self._log.close()


def render_text(doc: dict, indent: int = 0) -> str:
    lines = []
    pad = "  " * indent
    for k, v in doc.items():
        if isinstance(v, dict):
            lines.append(f"{pad}{k}:")
            lines.append(render_text(v, indent + 1))
        elif isinstance(v, float):
            lines.append(f"{pad}{k}: {v:.4f}")
        else:
            lines.append(f"{pad}{k}: {v}")
    return "\n".join(l for l in lines if l)


def epoch_rows(runs) -> list[dict]:
    """Per (seed, epoch) training curve rows."""
    rows = []
    for r in runs:
        for e, (losses, val) in enumerate(zip(r.epoch_losses, r.val_metrics)):
            rows.append({"seed": r.seed, "epoch": e, "val_score": val, **losses})
    return rows
