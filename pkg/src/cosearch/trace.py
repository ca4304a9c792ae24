"""Search-trace persistence: JSON-lines records with a header line, plus the
summary JSON. Everything written here is deterministic for a given config
(no timestamps, no environment state), so repeated runs are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable

TOOL_VERSION = "0.1.0"


def config_hash(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def make_header(raw_config: bytes, seed: int, strategy: str) -> dict:
    return {
        "type": "header",
        "config_hash": config_hash(raw_config),
        "seed": seed,
        "strategy": strategy,
        "tool_version": TOOL_VERSION,
    }


def write_trace(path: str | Path, header: dict, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for record in records:
            fh.write(json.dumps({"type": "record", **record}) + "\n")


def read_trace(path: str | Path) -> tuple[dict, list[dict]]:
    header = None
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("type") == "header":
                header = obj
            else:
                records.append(obj)
    if header is None:
        raise ValueError(f"{path}: no header line found")
    return header, records


def write_summary(path: str | Path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


def read_summary(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)
