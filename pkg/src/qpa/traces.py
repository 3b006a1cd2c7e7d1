"""Query stream records and the JSONL trace file format.

One record per line:
    {"id": ..., "account": "...", "ts_ms": ..., "label": "benign" |
     {"attack": {"run": ..., "alg": "..."}},
     "img": {"w": ..., "h": ..., "c": ..., "data_b64": "..."}}

Ground-truth labels exist for evaluation only; the defense never sees them.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .features import ImagePayload


@dataclass(frozen=True)
class AttackLabel:
    run: int
    alg: str


@dataclass(frozen=True)
class QueryRecord:
    query_id: int
    account: str
    ts_ms: int
    image: ImagePayload
    label: AttackLabel | None = None  # None = benign

    @property
    def is_attack(self) -> bool:
        return self.label is not None


def record_to_json(rec: QueryRecord) -> str:
    label = "benign" if rec.label is None else {"attack": {"run": rec.label.run, "alg": rec.label.alg}}
    doc = {
        "id": rec.query_id,
        "account": rec.account,
        "ts_ms": rec.ts_ms,
        "label": label,
        "img": {
            "w": rec.image.width,
            "h": rec.image.height,
            "c": rec.image.channels,
            "data_b64": base64.b64encode(rec.image.data.tobytes()).decode("ascii"),
        },
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def record_from_json(line: str) -> QueryRecord:
    doc = json.loads(line)
    img = doc["img"]
    data = np.frombuffer(base64.b64decode(img["data_b64"]), dtype=np.uint8)
    payload = ImagePayload(width=img["w"], height=img["h"], channels=img["c"], data=data)
    label = None
    if doc["label"] != "benign":
        a = doc["label"]["attack"]
        label = AttackLabel(run=a["run"], alg=a["alg"])
    return QueryRecord(
        query_id=doc["id"],
        account=doc["account"],
        ts_ms=doc["ts_ms"],
        image=payload,
        label=label,
    )


def write_trace(path: Path | str, records: Iterable[QueryRecord]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(record_to_json(rec))
            fh.write("\n")
            n += 1
    return n


def read_trace(path: Path | str) -> Iterator[QueryRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield record_from_json(line)
