"""
Table catalog: which files hold which partition, and their stripe row counts.

Written by the generator as manifest.json next to the table files; read by
the master to cut splits without opening every file. Row ids are global
across the table: a file's rows start at its row_base.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from lib.core.errors import ConfigError, MissingPartitionError
from lib.core.model import TableSchema

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class FileEntry:
    path: str
    partition: str
    stripe_rows: Sequence[int]
    row_base: int = 0

    @property
    def row_count(self) -> int:
        return sum(self.stripe_rows)

    def stripe_bases(self) -> List[int]:
        bases, total = [], 0
        for rows in self.stripe_rows:
            bases.append(total)
            total += rows
        return bases


@dataclass
class TableCatalog:
    schema: TableSchema
    files: List[FileEntry] = field(default_factory=list)
    root: Optional[Path] = None
    extra: dict = field(default_factory=dict)

    @property
    def row_count(self) -> int:
        return sum(f.row_count for f in self.files)

    @property
    def partitions(self) -> List[str]:
        return list(dict.fromkeys(f.partition for f in self.files))

    def add(self, path: str, partition: str, stripe_rows: Sequence[int]) -> FileEntry:
        entry = FileEntry(path, partition, tuple(stripe_rows), self.row_count)
        self.files.append(entry)
        return entry

    def files_for(self, partition: str) -> List[FileEntry]:
        files = [f for f in self.files if f.partition == partition]
        if not files:
            raise MissingPartitionError(f"table {self.schema.name} has no partition {partition}")
        return files

    def resolve(self, entry: FileEntry) -> str:
        path = Path(entry.path)
        if self.root is not None and not path.is_absolute():
            path = self.root / path
        return str(path)

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "files": [
                {"path": f.path, "partition": f.partition, "stripe_rows": list(f.stripe_rows),
                 "row_base": f.row_base}
                for f in self.files
            ],
            **self.extra,
        }

    def save(self, directory) -> Path:
        path = Path(directory) / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, raw: dict, root: Optional[Path] = None) -> "TableCatalog":
        files = [
            FileEntry(f["path"], f["partition"], tuple(int(r) for r in f["stripe_rows"]),
                      int(f["row_base"]))
            for f in raw["files"]
        ]
        extra = {k: v for k, v in raw.items() if k not in ("schema", "files")}
        return cls(TableSchema.from_dict(raw["schema"]), files, root, extra)

    @classmethod
    def load(cls, directory) -> "TableCatalog":
        directory = Path(directory)
        try:
            raw = json.loads((directory / MANIFEST_NAME).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read table manifest in {directory}: {exc}") from exc
        return cls.from_dict(raw, directory)


def partition_rows(catalog: TableCatalog) -> Dict[str, int]:
    out: Dict[str, int] = {}
    for f in catalog.files:
        out[f.partition] = out.get(f.partition, 0) + f.row_count
    return out
