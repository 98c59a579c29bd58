"""Line-based sensor log format.

One record per line, time-ordered:

    LASER <ts> <n> <r1> ... <rn>     range readings (meters)
    ODOM <ts> <dx> <dy> <dtheta>     dead-reckoning delta since last ODOM
    TRUTH <ts> <x> <y> <theta>       ground-truth pose

Blank lines and lines starting with '#' are skipped. Floats are written
with repr so a write/read roundtrip is exact. Converters for external
dataset layouts can be registered as adapters that yield SensorRecord
streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import LogOrderingError, LogParseError
from .geometry import Pose2

LASER = "laser"
ODOMETRY = "odometry"
GROUND_TRUTH = "ground_truth"


@dataclass
class SensorRecord:
    timestamp: float
    kind: str
    payload: "np.ndarray | Pose2"


_ADAPTERS: dict[str, Callable[[str], Iterator[SensorRecord]]] = {}


def register_adapter(name: str, reader: Callable[[str], Iterator[SensorRecord]]) -> None:
    """Plug in a converter for an external dataset layout."""
    _ADAPTERS[name] = reader


def read_log(path: str, adapter: str | None = None) -> Iterator[SensorRecord]:
    """Yield time-ordered records from a log file.

    Raises LogParseError (with line number) on malformed lines and
    LogOrderingError when timestamps go backwards.
    """
    if adapter is not None:
        if adapter not in _ADAPTERS:
            raise LogParseError(f"unknown log adapter '{adapter}'")
        yield from _ADAPTERS[adapter](path)
        return

    last_ts = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "LASER":
                    ts = float(parts[1])
                    n = int(parts[2])
                    ranges = np.array([float(v) for v in parts[3:]], dtype=np.float64)
                    if len(ranges) != n:
                        raise ValueError(f"expected {n} ranges, found {len(ranges)}")
                    record = SensorRecord(ts, LASER, ranges)
                elif tag == "ODOM":
                    ts, dx, dy, dth = (float(v) for v in parts[1:5])
                    record = SensorRecord(ts, ODOMETRY, Pose2(dx, dy, dth))
                elif tag == "TRUTH":
                    ts, x, y, th = (float(v) for v in parts[1:5])
                    record = SensorRecord(ts, GROUND_TRUTH, Pose2(x, y, th))
                else:
                    raise ValueError(f"unknown record tag '{tag}'")
            except (ValueError, IndexError) as exc:
                raise LogParseError(str(exc), lineno) from exc
            if last_ts is not None and record.timestamp < last_ts:
                raise LogOrderingError(
                    f"line {lineno}: timestamp {record.timestamp} after {last_ts}"
                )
            last_ts = record.timestamp
            yield record


def write_log(records: Iterable[SensorRecord], path: str) -> None:
    with open(path, "w") as fh:
        for rec in records:
            if rec.kind == LASER:
                ranges = " ".join(repr(float(r)) for r in rec.payload)
                fh.write(f"LASER {rec.timestamp!r} {len(rec.payload)} {ranges}\n")
            elif rec.kind == ODOMETRY:
                p = rec.payload
                fh.write(f"ODOM {rec.timestamp!r} {p.x!r} {p.y!r} {p.theta!r}\n")
            elif rec.kind == GROUND_TRUTH:
                p = rec.payload
                fh.write(f"TRUTH {rec.timestamp!r} {p.x!r} {p.y!r} {p.theta!r}\n")
            else:
                raise LogParseError(f"cannot serialize record kind '{rec.kind}'")
