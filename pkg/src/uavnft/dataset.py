"""Flight record files and their chunking into Merkle data blocks.

A flight record file is JSON lines, one record per line::

    {"timestamp_us": 1700000000000000, "position": [x, y, z], "sensors": {"altitude": 120.5}}

Timestamps must be non-decreasing. A block holds up to ``chunk_size``
consecutive records; its payload is the canonical encoding of those records and
its timestamp is that of its first record.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .crypto_core import canonical_encode
from .merkle import DataBlock, MerkleTree, build_tree
from .records import NftMetadata, Vec3


class RecordParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class FlightRecord:
    timestamp_us: int
    position: Vec3
    sensors: tuple[tuple[str, float], ...]

    def field(self, name: str) -> float:
        if name in ("x", "y", "z"):
            return self.position["xyz".index(name)]
        for key, value in self.sensors:
            if key == name:
                return value
        raise KeyError(name)


def _number(v, what: str, line: int) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise RecordParseError(line, f"{what} must be a finite number")
    return float(v)


def parse_record(obj, line: int) -> FlightRecord:
    if not isinstance(obj, dict):
        raise RecordParseError(line, "record must be a JSON object")
    extra = set(obj) - {"timestamp_us", "position", "sensors"}
    if extra:
        raise RecordParseError(line, f"unexpected keys {sorted(extra)}")
    ts = obj.get("timestamp_us")
    if isinstance(ts, bool) or not isinstance(ts, int) or not 0 <= ts < 2**64:
        raise RecordParseError(line, "timestamp_us must be an unsigned 64-bit integer")
    pos = obj.get("position")
    if not isinstance(pos, list) or len(pos) != 3:
        raise RecordParseError(line, "position must be a list of 3 numbers")
    position = tuple(_number(c, "position component", line) for c in pos)
    sensors = obj.get("sensors", {})
    if not isinstance(sensors, dict):
        raise RecordParseError(line, "sensors must be an object")
    readings = tuple(sorted((str(k), _number(v, f"sensor {k!r}", line))
                            for k, v in sensors.items()))
    return FlightRecord(ts, position, readings)


def parse_lines(lines: Iterable[str]) -> list[FlightRecord]:
    records: list[FlightRecord] = []
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise RecordParseError(lineno, f"invalid JSON ({exc.msg})") from None
        rec = parse_record(obj, lineno)
        if records and rec.timestamp_us < records[-1].timestamp_us:
            raise RecordParseError(lineno, "timestamp decreases")
        records.append(rec)
    if not records:
        raise RecordParseError(0, "file contains no records")
    return records


def load_records(path: str | Path) -> list[FlightRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh)


def chunk(records: Sequence[FlightRecord], chunk_size: int = 1) -> list[DataBlock]:
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    blocks = []
    for i in range(0, len(records), chunk_size):
        group = tuple(records[i:i + chunk_size])
        payload = canonical_encode(group, tuple[FlightRecord, ...])
        blocks.append(DataBlock(len(blocks), group[0].timestamp_us, payload))
    return blocks


@dataclass(frozen=True)
class Ingested:
    records: list[FlightRecord]
    blocks: list[DataBlock]
    tree: MerkleTree

    @property
    def root(self):
        return self.tree.root

    def metadata(self, mission_id: str, uav_id: str = "", region: str = "") -> NftMetadata:
        return NftMetadata(
            mission_id=mission_id,
            uav_id=uav_id,
            start_time=self.records[0].timestamp_us,
            end_time=self.records[-1].timestamp_us,
            block_count=len(self.blocks),
            declared_region=region,
        )


def ingest(path: str | Path, chunk_size: int = 1) -> Ingested:
    records = load_records(path)
    blocks = chunk(records, chunk_size)
    return Ingested(records, blocks, build_tree(blocks))
