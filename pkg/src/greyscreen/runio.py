"""Run-directory layout, commented CSV files, and the stage manifest."""

from __future__ import annotations

import csv
import json
import os
import re
from datetime import datetime, timezone
from pathlib import Path

SUBDIRS = ("logs", "cache", "vault", "PDF", "reports")


class RunDir:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def create(self) -> "RunDir":
        for name in SUBDIRS:
            (self.root / name).mkdir(parents=True, exist_ok=True)
        return self

    logs = property(lambda self: self.root / "logs")
    cache = property(lambda self: self.root / "cache")
    vault = property(lambda self: self.root / "vault")
    pdf = property(lambda self: self.root / "PDF")
    reports = property(lambda self: self.root / "reports")
    manifest_path = property(lambda self: self.root / "manifest")

    @property
    def screening_csv(self) -> Path:
        return self.logs / "screening.csv"

    @property
    def fetch_log(self) -> Path:
        return self.logs / "fetch_log.csv"

    @property
    def evaluation_log(self) -> Path:
        return self.logs / "evaluation_log.csv"

    def load_manifest(self) -> dict:
        if self.manifest_path.exists():
            return json.loads(self.manifest_path.read_text(encoding="utf-8"))
        return {}

    def update_manifest(self, config_hash: str, stage: str, **fields) -> dict:
        manifest = self.load_manifest()
        manifest["run_id"] = config_hash
        manifest["config_hash"] = config_hash
        stages = manifest.setdefault("stages", {})
        entry = stages.setdefault(stage, {})
        entry.update(fields)
        entry["complete"] = entry.get("input_rows") == entry.get("output_rows") and not entry.get("error")
        self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return manifest


def safe_name(source_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", source_id) or "_"


def timestamp() -> str:
    """UTC ISO timestamp; honours SOURCE_DATE_EPOCH for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def read_comments(path: str | Path) -> dict[str, str]:
    """``# key=value`` lines at the top of a CSV file."""
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
    return meta


def read_csv(path: str | Path, required: tuple[str, ...] = ()) -> list[dict[str, str]]:
    """Rows of a CSV whose leading ``#`` comment lines are skipped."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        reader = csv.DictReader(lines)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing and (header or required):
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}; header is {header}")
        return list(reader)


class CsvAppender:
    """Append-only CSV log that writes its comment block and header on creation."""

    def __init__(self, path: str | Path, header: list[str], comments: dict[str, str] | None = None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "a", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        if fresh:
            for key, value in (comments or {}).items():
                self._fh.write(f"# {key}={value}\n")
            self._writer.writerow(header)
            self._fh.flush()

    def write(self, row: list) -> None:
        self._writer.writerow(row)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "CsvAppender":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_csv(path: str | Path, header: list[str], rows, comments: dict[str, str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key, value in (comments or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path
