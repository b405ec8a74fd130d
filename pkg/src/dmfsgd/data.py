"""Dataset files, trace preprocessing and matrix diagnostics.

Matrix files hold ``n`` on the first line followed by ``n`` rows of ``n``
whitespace-separated distances in milliseconds; ``-1`` marks an unmeasured
entry. Trace files are CSV with header ``t_ms,src,dst,rtt_ms`` sorted by time.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import PartialMatrix

UNMEASURED = -1.0
TRACE_HEADER = ["t_ms", "src", "dst", "rtt_ms"]


class DataError(ValueError):
    """A dataset file could not be parsed."""


@dataclass(frozen=True)
class MeasurementEvent:
    t: float
    src: int
    dst: int
    rtt: float

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError(f"event at t={self.t} measures node {self.src} against itself")
        if not math.isfinite(self.rtt) or self.rtt < 0:
            raise ValueError(f"event at t={self.t} has invalid rtt {self.rtt}")


@dataclass
class TraceDataset:
    events: list[MeasurementEvent]
    n: int

    def __post_init__(self):
        for a, b in zip(self.events, self.events[1:]):
            if b.t < a.t:
                raise DataError(f"trace is not sorted by time (t={b.t} after t={a.t})")
        for e in self.events:
            if not (0 <= e.src < self.n and 0 <= e.dst < self.n):
                raise DataError(f"event at t={e.t} references a node outside [0, {self.n})")


def parse_matrix(text: str) -> PartialMatrix:
    lines = [(no, ln) for no, ln in enumerate(text.split("\n"), start=1) if ln.strip()]
    if not lines:
        raise DataError("line 1: empty matrix file")
    no, first = lines[0]
    try:
        n = int(first.strip())
    except ValueError:
        raise DataError(f"line {no}: expected node count, got {first.strip()!r}") from None
    if n < 1:
        raise DataError(f"line {no}: node count must be positive")
    rows = lines[1:]
    if len(rows) != n:
        raise DataError(f"line {no}: header declares {n} rows but the file has {len(rows)}")
    d = np.zeros((n, n))
    w = np.zeros((n, n))
    for i, (no, ln) in enumerate(rows):
        fields = ln.split()
        if len(fields) != n:
            raise DataError(f"line {no}: expected {n} values, got {len(fields)}")
        for j, tok in enumerate(fields):
            try:
                v = float(tok)
            except ValueError:
                raise DataError(f"line {no}: malformed value {tok!r}") from None
            if v == UNMEASURED:
                continue
            if not math.isfinite(v):
                raise DataError(f"line {no}: non-finite value {tok!r}")
            if v < 0:
                raise DataError(f"line {no}: negative distance {tok!r}")
            d[i, j] = v
            w[i, j] = 1.0
    return PartialMatrix(d, w)


def load_matrix(path) -> PartialMatrix:
    return parse_matrix(Path(path).read_text(encoding="utf-8"))


def _fmt(v: float) -> str:
    if v == int(v):
        return str(int(v))
    return repr(float(v))


def format_matrix(m: PartialMatrix) -> str:
    lines = [str(m.n)]
    for i in range(m.n):
        lines.append(" ".join(
            _fmt(m.d[i, j]) if m.w[i, j] > 0 else ("0" if i == j else "-1")
            for j in range(m.n)
        ))
    return "\n".join(lines) + "\n"


def save_matrix(m: PartialMatrix, path) -> None:
    Path(path).write_text(format_matrix(m), encoding="utf-8", newline="\n")


def load_trace(path, n: int | None = None) -> TraceDataset:
    """Read a trace CSV. ``n`` defaults to one more than the largest node id."""
    events = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRACE_HEADER:
            raise DataError(f"line 1: expected header {','.join(TRACE_HEADER)}")
        last_t = -math.inf
        for no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"line {no}: expected 4 fields, got {len(row)}")
            try:
                t, src, dst, rtt = float(row[0]), int(row[1]), int(row[2]), float(row[3])
            except ValueError:
                raise DataError(f"line {no}: malformed row {','.join(row)!r}") from None
            if t < last_t:
                raise DataError(f"line {no}: trace is not sorted by t_ms")
            last_t = t
            try:
                events.append(MeasurementEvent(t, src, dst, rtt))
            except ValueError as exc:
                raise DataError(f"line {no}: {exc}") from None
    if n is None:
        n = 1 + max((max(e.src, e.dst) for e in events), default=-1)
    return TraceDataset(events, n)


def save_trace(trace: TraceDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for e in trace.events:
            writer.writerow([_fmt(e.t), e.src, e.dst, _fmt(e.rtt)])


def median(values) -> float:
    """Median; an even count averages the two middle values."""
    return float(np.median(np.asarray(values, dtype=np.float64)))


def median_filter(samples, window: float, now: float) -> float | None:
    """Median of the ``(t, rtt)`` samples with ``now - window < t <= now``, or None if there are none."""
    vals = [rtt for t, rtt in samples if now - window < t <= now]
    if not vals:
        return None
    return median(vals)


def ground_truth(trace: TraceDataset) -> PartialMatrix:
    """Per-pair median over the whole trace; pairs never measured stay masked."""
    per_pair = defaultdict(list)
    for e in trace.events:
        per_pair[e.src, e.dst].append(e.rtt)
    d = np.zeros((trace.n, trace.n))
    w = np.zeros((trace.n, trace.n))
    for (i, j), vals in per_pair.items():
        d[i, j] = median(vals)
        w[i, j] = 1.0
    return PartialMatrix(d, w)


def tiv_ratio(m: PartialMatrix) -> float:
    """Fraction of measured edges AB for which some C has d_AB > d_AC + d_CB.

    Edges are counted once per unordered pair, using the upper triangle of
    the (assumed symmetric) matrix.
    """
    known = m.measured
    d = np.where(known, m.d, np.inf)
    n = m.n
    edges = 0
    tiv = 0
    for a in range(n):
        # detour[b, c] = d_ac + d_cb over C measured on both sides
        detour = d[a][None, :] + d.T
        detour[:, a] = np.inf
        best = detour.min(axis=1)
        for b in range(a + 1, n):
            if not known[a, b]:
                continue
            edges += 1
            if m.d[a, b] > best[b]:
                tiv += 1
    return tiv / edges if edges else 0.0


def singular_profile(m, count: int) -> np.ndarray:
    """Leading ``count`` singular values of a complete matrix divided by the largest one."""
    from .baselines import complete_dense, singular_values

    s = singular_values(complete_dense(m))
    if s[0] == 0:
        return np.zeros(min(count, s.size))
    return s[:count] / s[0]
