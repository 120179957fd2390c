"""Line-delimited JSON record files, the batch wire format for every CLI."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

SCHEMA_VERSION = 1


def dumps_record(record: dict) -> str:
    # compact separators keep batch files byte-stable across runs
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: bad record: {exc}") from exc
    return records


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(dumps_record(record))
            fh.write("\n")
            count += 1
    return count
