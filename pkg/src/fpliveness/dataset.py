"""Dataset ingestion for the ``train|test / live|spoof`` directory layout.

Either ``root`` itself holds ``train/`` and ``test/`` (one scanner, named
after ``root``), or every subdirectory of ``root`` does (one per scanner).
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from pathlib import Path

from fpliveness.patches import Label

SPLITS = ("train", "test")
IMAGE_SUFFIXES = (".png", ".pgm")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetEntry:
    path: Path
    label: Label
    scanner: str
    split: str
    source_id: str


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    entries: tuple

    def split(self, name: str) -> list[DatasetEntry]:
        return [e for e in self.entries if e.split == name]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "label", "scanner", "split", "source_id"])
        for e in self.entries:
            w.writerow([e.path.relative_to(self.root).as_posix(), e.label.value, e.scanner, e.split, e.source_id])
        return buf.getvalue()


def _source_id(rel: Path, label: Label, scanner: str, multi: bool) -> str:
    stem = "-".join(rel.with_suffix("").parts)
    stem = re.sub(r"[^A-Za-z0-9_.-]", "_", stem)
    prefix = f"{scanner}-" if multi else ""
    return f"{prefix}{label.value}-{stem}"


def _scanner_roots(root: Path):
    if all((root / s).is_dir() for s in SPLITS):
        return [(root.name or "scanner", root)], False
    subs = sorted(p for p in root.iterdir() if p.is_dir() and any((p / s).is_dir() for s in SPLITS)) if root.is_dir() else []
    if not subs:
        raise DatasetError(f"missing subdirectory: {root} has no train/ and test/ directories")
    return [(p.name, p) for p in subs], True


def ingest_dataset(root) -> DatasetManifest:
    root = Path(root).resolve()
    if not root.is_dir():
        raise DatasetError(f"missing subdirectory: dataset root {root} does not exist")
    scanners, multi = _scanner_roots(root)
    entries = []
    for scanner, sroot in scanners:
        for split in SPLITS:
            for label in (Label.LIVE, Label.SPOOF):
                d = sroot / split / label.value
                if not d.is_dir():
                    raise DatasetError(f"missing subdirectory: {d}")
                for path in sorted(d.rglob("*")):
                    if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES:
                        rel = path.relative_to(d)
                        entries.append(DatasetEntry(path, label, scanner, split, _source_id(rel, label, scanner, multi)))
    if not entries:
        raise DatasetError(f"zero images under {root}")
    entries.sort(key=lambda e: (e.scanner, SPLITS.index(e.split), e.label.value, e.path.as_posix()))
    return DatasetManifest(root, tuple(entries))
