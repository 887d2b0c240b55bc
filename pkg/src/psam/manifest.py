"""Corpus manifest: a versioned CSV with one row per converted sample."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields
from pathlib import Path

FORMAT_VERSION = 1
COLUMNS = ("digest", "path", "label", "family", "year", "split", "source")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRow:
    digest: str
    path: str
    label: str
    family: str | None = None
    year: int | None = None
    split: str = "train"
    source: str = ""

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ManifestError(f"split must be train or test, got {self.split!r}")


def dumps(rows: list[ManifestRow]) -> str:
    digests = [r.digest for r in rows]
    if len(set(digests)) != len(digests):
        raise ManifestError("manifest digests must be unique")
    buf = io.StringIO()
    buf.write(f"#format_version={FORMAT_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in rows:
        writer.writerow(
            [r.digest, r.path, r.label, r.family or "", "" if r.year is None else r.year, r.split, r.source]
        )
    return buf.getvalue()


def loads(text: str) -> list[ManifestRow]:
    lines = text.splitlines()
    version = None
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if key.strip() == "format_version":
                version = int(value)
            continue
        body.append(line)
    if version is not None and version != FORMAT_VERSION:
        raise ManifestError(f"unsupported manifest format_version {version}")
    reader = csv.DictReader(body)
    if reader.fieldnames is None or not {"digest", "path", "label"} <= set(reader.fieldnames):
        raise ManifestError("manifest needs at least digest, path and label columns")
    known = {f.name for f in fields(ManifestRow)}
    rows = []
    for rec in reader:
        rec = {k: v for k, v in rec.items() if k in known}
        rec["year"] = int(rec["year"]) if rec.get("year") else None
        rec["family"] = rec.get("family") or None
        rec.setdefault("split", "train")
        rec["split"] = rec["split"] or "train"
        rows.append(ManifestRow(**rec))
    digests = [r.digest for r in rows]
    if len(set(digests)) != len(digests):
        raise ManifestError("manifest digests must be unique")
    return rows


def write(path: str | Path, rows: list[ManifestRow]) -> None:
    Path(path).write_text(dumps(rows))


def read(path: str | Path) -> list[ManifestRow]:
    return loads(Path(path).read_text())
