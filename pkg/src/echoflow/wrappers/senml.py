"""SenML-style records: one JSON object per line, {"bn": str, "e": [{"n","u","v","t"}]}."""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Iterable

from ..databatch import EventTuple


class MalformedRecord(ValueError):
    pass


def parse_record(line: str | bytes) -> list[EventTuple]:
    try:
        rec = json.loads(line)
    except ValueError as exc:
        raise MalformedRecord(f"not JSON: {exc}") from exc
    if not isinstance(rec, dict) or not isinstance(rec.get("e"), list) or not rec["e"]:
        raise MalformedRecord("record needs a non-empty 'e' list")
    base = rec.get("bn", "")
    if not isinstance(base, str):
        raise MalformedRecord("'bn' must be a string")
    out = []
    for entry in rec["e"]:
        if not isinstance(entry, dict):
            raise MalformedRecord("entries must be objects")
        value = entry.get("v")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise MalformedRecord("entry needs a numeric 'v'")
        t = entry.get("t", 0)
        if isinstance(t, bool) or not isinstance(t, (int, float)) or t < 0:
            raise MalformedRecord("entry 't' must be a non-negative number")
        out.append(EventTuple.create(base + str(entry.get("n", "")), value, str(entry.get("u", "")), int(t)))
    return out


def record_line(tuples: Iterable[EventTuple], base: str = "") -> str:
    entries = []
    for t in tuples:
        name = t.name[len(base):] if base and t.name.startswith(base) else t.name
        entries.append({"n": name, "u": t.unit, "v": t.value, "t": t.timestamp})
    return json.dumps({"bn": base, "e": entries}, separators=(",", ":"))


def write_taxi_file(path: str | Path, n_records: int, seed: int = 7, sensors: int = 20) -> Path:
    """Synthetic taxi-ride readings (fare, distance) in [0, 100), one entry per record."""
    rng = random.Random(seed)
    path = Path(path)
    fields = (("fare", "USD"), ("distance", "mi"), ("duration", "s"))
    with path.open("w") as fh:
        for i in range(n_records):
            name, unit = fields[i % len(fields)]
            sensor = f"taxi{rng.randrange(sensors):03d}/"
            value = round(rng.uniform(0, 100), 3)
            fh.write(record_line([EventTuple(sensor + name, value, unit, 1_500_000_000_000 + i)], base=sensor) + "\n")
    return path
