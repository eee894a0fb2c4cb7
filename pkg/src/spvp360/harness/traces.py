"""Gaze traces: per-user head orientations over time, stored as CSV
``user_id,timestamp_s,alpha,beta,gamma`` with a header row."""
from __future__ import annotations

import csv
import io
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

from ..sphere_geom import EulerOrientation, LatLon, euler_to_latlon

HEADER = ["user_id", "timestamp_s", "alpha", "beta", "gamma"]


class TraceFormatError(ValueError):
    pass


@dataclass
class GazeTrace:
    user_id: str
    times: list[float] = field(default_factory=list)
    orientations: list[EulerOrientation] = field(default_factory=list)

    def __post_init__(self):
        if len(self.times) != len(self.orientations):
            raise ValueError("times and orientations differ in length")
        for a, b in zip(self.times, self.times[1:]):
            if not b > a:
                raise TraceFormatError(f"user {self.user_id}: timestamps not strictly increasing ({a} -> {b})")

    def __len__(self) -> int:
        return len(self.times)

    def latlons(self) -> list[LatLon]:
        return [euler_to_latlon(o) for o in self.orientations]

    def index_at(self, t: float, tol: float = 1e-9) -> int:
        """Index of the latest sample taken no later than ``t``."""
        i = bisect_right(self.times, t + tol) - 1
        if i < 0:
            raise LookupError(f"user {self.user_id} has no sample at or before t={t}")
        return i

    def sample_at(self, t: float) -> tuple[float, EulerOrientation]:
        i = self.index_at(t)
        return self.times[i], self.orientations[i]


def parse_traces(text: str, source: str = "<string>") -> list[GazeTrace]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TraceFormatError(f"{source}: missing header row") from None
    if [h.strip() for h in header] != HEADER:
        raise TraceFormatError(f"{source}:1: expected header {','.join(HEADER)}")
    rows: dict[str, list[tuple[float, EulerOrientation]]] = {}
    problems = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 5:
            problems.append(f"{source}:{lineno}: expected 5 fields, got {len(row)}")
            continue
        try:
            t, a, b, g = (float(c) for c in row[1:])
        except ValueError:
            problems.append(f"{source}:{lineno}: non-numeric field")
            continue
        if (a, b, g) == (0.0, 0.0, 0.0):
            problems.append(f"{source}:{lineno}: zero orientation vector")
            continue
        rows.setdefault(row[0].strip(), []).append((t, EulerOrientation(a, b, g)))
    if problems:
        raise TraceFormatError("malformed trace rows:\n" + "\n".join(problems))
    traces = []
    for uid in sorted(rows):
        samples = sorted(rows[uid], key=lambda s: s[0])
        times = [s[0] for s in samples]
        for a, b in zip(times, times[1:]):
            if not b > a:
                raise TraceFormatError(f"{source}: user {uid} has repeated timestamp {a}")
        traces.append(GazeTrace(uid, times, [s[1] for s in samples]))
    return traces


def ingest_traces(path) -> list[GazeTrace]:
    """Read a trace CSV; rows may appear in any order and are sorted per user."""
    path = Path(path)
    return parse_traces(path.read_text(), str(path))


def format_traces(traces: list[GazeTrace]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for tr in traces:
        for t, o in zip(tr.times, tr.orientations):
            w.writerow([tr.user_id, repr(t), repr(o.alpha), repr(o.beta), repr(o.gamma)])
    return buf.getvalue()


def write_traces(path, traces: list[GazeTrace]) -> None:
    Path(path).write_text(format_traces(traces))
