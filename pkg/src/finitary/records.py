"""Versioned record formats: JSON Lines samples, JSON reports, CSV tables.

Sample record (one JSON object per line, keys in this order)::

    version  int     record format version (currently 1)
    model    str     model registry name
    seed     int     64-bit seed of the noise field
    replica  int     replica id, equal to the noise stream
    site     [int]   lattice site (time index for chain models)
    value    int|null  output symbol, null when unresolved
    tau      int     coalescence depth (t_max when unresolved)
    radius   int     measured coding radius
    status   str     "Coalesced" or "Unresolved"
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SAMPLE_VERSION = 1
REPORT_VERSION = 1
SAMPLE_KEYS = ("version", "model", "seed", "replica", "site", "value", "tau", "radius", "status")
SCAN_COLUMNS = ("parameter", "value", "size", "statistic", "estimate", "ci_lo", "ci_hi", "status")


class RecordError(ValueError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(loc + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class SampleRecord:
    model: str
    seed: int
    replica: int
    site: tuple[int, ...]
    value: int | None
    tau: int
    radius: int
    status: str
    version: int = SAMPLE_VERSION

    def to_json(self) -> str:
        obj = {
            "version": self.version,
            "model": self.model,
            "seed": self.seed,
            "replica": self.replica,
            "site": list(self.site),
            "value": self.value,
            "tau": self.tau,
            "radius": self.radius,
            "status": self.status,
        }
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_obj(cls, obj: dict) -> "SampleRecord":
        if not isinstance(obj, dict):
            raise ValueError("record is not an object")
        missing = [k for k in SAMPLE_KEYS if k not in obj]
        if missing:
            raise ValueError(f"missing fields {missing}")
        extra = [k for k in obj if k not in SAMPLE_KEYS]
        if extra:
            raise ValueError(f"unknown fields {extra}")
        if obj["version"] != SAMPLE_VERSION:
            raise ValueError(f"unsupported record version {obj['version']}")
        if obj["status"] not in ("Coalesced", "Unresolved"):
            raise ValueError(f"bad status {obj['status']!r}")
        for k in ("seed", "replica", "tau", "radius"):
            if not isinstance(obj[k], int) or obj[k] < 0:
                raise ValueError(f"field {k} must be a non-negative integer")
        if not isinstance(obj["site"], list) or not all(isinstance(c, int) for c in obj["site"]):
            raise ValueError("site must be a list of integers")
        if obj["value"] is not None and not isinstance(obj["value"], int):
            raise ValueError("value must be an integer or null")
        if (obj["value"] is None) != (obj["status"] == "Unresolved"):
            raise ValueError("value must be null exactly when unresolved")
        return cls(
            model=str(obj["model"]), seed=obj["seed"], replica=obj["replica"], site=tuple(obj["site"]),
            value=obj["value"], tau=obj["tau"], radius=obj["radius"], status=obj["status"],
        )


def write_samples(path: str | Path, records: Iterable[SampleRecord]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")
            n += 1
    return n


def read_samples(path: str | Path) -> list[SampleRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if not line.endswith("\n"):
                # a final line without terminator is a crash-truncated write
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise RecordError(f"truncated record: {exc.msg}", str(path), lineno) from None
            else:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise RecordError(f"malformed JSON: {exc.msg}", str(path), lineno) from None
            try:
                out.append(SampleRecord.from_obj(obj))
            except ValueError as exc:
                raise RecordError(str(exc), str(path), lineno) from None
    if not out:
        raise RecordError("no records", str(path), 0)
    return out


@dataclass
class SampleTable:
    """Records arranged as replicas x sites arrays."""

    model: str
    seed: int
    replicas: np.ndarray
    sites: list[tuple[int, ...]]
    values: np.ndarray
    radii: np.ndarray
    taus: np.ndarray
    unresolved: int


def tabulate(records: Sequence[SampleRecord]) -> SampleTable:
    seeds = {r.seed for r in records}
    if len(seeds) != 1:
        raise RecordError(f"records mix seeds {sorted(seeds)}; joint statistics would be invalid")
    models = {r.model for r in records}
    if len(models) != 1:
        raise RecordError(f"records mix models {sorted(models)}")
    reps = sorted({r.replica for r in records})
    sites = sorted({r.site for r in records})
    ri = {r: i for i, r in enumerate(reps)}
    si = {s: j for j, s in enumerate(sites)}
    V = np.full((len(reps), len(sites)), -1, dtype=np.int64)
    Rr = np.full((len(reps), len(sites)), -1, dtype=np.int64)
    Tt = np.full((len(reps), len(sites)), -1, dtype=np.int64)
    seen = np.zeros((len(reps), len(sites)), dtype=bool)
    unresolved = 0
    for r in records:
        i, j = ri[r.replica], si[r.site]
        if seen[i, j]:
            raise RecordError(f"duplicate record for replica {r.replica} site {list(r.site)}")
        seen[i, j] = True
        V[i, j] = -1 if r.value is None else r.value
        Rr[i, j] = r.radius
        Tt[i, j] = r.tau
        unresolved += r.status == "Unresolved"
    if not seen.all():
        raise RecordError("records do not cover every (replica, site) pair")
    return SampleTable(models.pop(), seeds.pop(), np.array(reps), sites, V, Rr, Tt, unresolved)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def write_report(path: str | Path, sections: dict) -> None:
    body = {"version": REPORT_VERSION, **_jsonable(sections)}
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> dict:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("version") != REPORT_VERSION:
        raise RecordError(f"unsupported report version {obj.get('version')}")
    return obj


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["version", *columns])
    for row in rows:
        w.writerow([REPORT_VERSION, *[_fmt(v) for v in row]])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path: str | Path) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(Path(path).read_text(encoding="utf-8"))))
    for r in rows:
        if r.get("version") != str(REPORT_VERSION):
            raise RecordError(f"unsupported table version {r.get('version')}")
    return rows


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
