"""JSON-lines manifests: one object per line with at least path, label, speaker."""

from __future__ import annotations

import json
import os
from typing import Iterable

LABELS = ("target_natural", "other_natural", "fake")


class ManifestError(ValueError):
    pass


def read_manifest(path) -> list[dict]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing manifest: {path}")
    rows = []
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc.msg}") from exc
            for key in ("path", "label"):
                if key not in row:
                    raise ManifestError(f"{path}:{lineno}: missing field {key!r}")
            if row["label"] not in LABELS:
                raise ManifestError(f"{path}:{lineno}: unknown label {row['label']!r}")
            row.setdefault("speaker", None)
            if not os.path.isabs(row["path"]):
                row["path"] = os.path.join(base, row["path"])
            rows.append(row)
    return rows


def write_jsonl(path, rows: Iterable[dict]) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def by_label(rows: list[dict], *labels: str) -> list[dict]:
    return [r for r in rows if r["label"] in labels]
