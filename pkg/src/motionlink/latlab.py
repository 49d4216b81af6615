"""Latency analysis over merged session logs.

Per-frame one-way latency is receive minus send timestamp, each read on its
own side's clock.  Without clock sync the absolute level is meaningless but
the spread is not: subtracting the series median cancels any constant offset.
Statistics follow fixed conventions so results are exact and reproducible:

* median: lower median for even n
* std: sample standard deviation (n - 1); reported as 0 for n = 1
* p95: nearest rank, the ``ceil(0.95 n)``-th smallest value
* 3-sigma filter: one pass, drops ``|v - mean| > 3 * std``
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

from .session import Counters, SessionLog


class EmptyLog(ValueError):
    pass


class NoHapticEvents(ValueError):
    pass


class DegenerateSeries(ValueError):
    pass


@dataclass(frozen=True)
class LatencySeries:
    values_ms: tuple[float, ...]
    sequences: tuple[int, ...]
    removed: tuple[tuple[int, float], ...] = ()
    n_lost: int = 0

    def __post_init__(self) -> None:
        if len(self.values_ms) != len(self.sequences):
            raise ValueError("values and sequences must align")

    def __len__(self) -> int:
        return len(self.values_ms)

    def by_sequence(self) -> dict[int, float]:
        return dict(zip(self.sequences, self.values_ms))


@dataclass(frozen=True)
class LatencySummary:
    mean_ms: float
    p95_ms: float
    max_ms: float
    min_ms: float
    std_ms: float
    median_ms: float
    n_raw: int
    n_kept: int
    n_removed: int
    single_sample: bool = False
    label: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def series_from(values, sequences=None) -> LatencySeries:
    values = tuple(float(v) for v in values)
    if sequences is None:
        sequences = range(len(values))
    return LatencySeries(values, tuple(sequences))


def raw_latencies(log: SessionLog) -> LatencySeries:
    vals, seqs = [], []
    lost = 0
    for rec in log.sorted_records():
        if rec.t_send_us is None:
            continue
        if rec.t_recv_us is None:
            lost += 1
            continue
        vals.append((rec.t_recv_us - rec.t_send_us) / 1000)
        seqs.append(rec.seq)
    if not vals:
        raise EmptyLog("no received frames with both timestamps")
    return LatencySeries(tuple(vals), tuple(seqs), n_lost=lost)


def _moments(values) -> tuple[Fraction, Fraction]:
    """Exact mean and sample variance (0 for n = 1)."""
    fr = [Fraction(v) for v in values]
    n = len(fr)
    mu = sum(fr) / n
    if n < 2:
        return mu, Fraction(0)
    return mu, sum((v - mu) ** 2 for v in fr) / (n - 1)


def _mean_std(values) -> tuple[float, float]:
    # exact rational sums, rounded once: identical on every Python version
    mu, var = _moments(values)
    return float(mu), math.sqrt(float(var))


def lower_median(values) -> float:
    s = sorted(values)
    return s[(len(s) - 1) // 2]


def normalize_offset(series: LatencySeries) -> LatencySeries:
    if not series.values_ms:
        raise EmptyLog("cannot normalize an empty series")
    m = lower_median(series.values_ms)
    return LatencySeries(
        tuple(v - m for v in series.values_ms),
        series.sequences,
        tuple((s, v - m) for s, v in series.removed),
        series.n_lost,
    )


def filter_3sigma(series: LatencySeries) -> tuple[LatencySeries, list[tuple[int, float]]]:
    if len(series) < 2:
        raise ValueError("3-sigma filter needs at least two values")
    mu, var = _moments(series.values_ms)
    if var == 0:
        if any(Fraction(v) != mu for v in series.values_ms):
            raise DegenerateSeries("zero variance with unequal values")
        return series, []
    # |v - mu| > 3 s  <=>  (v - mu)^2 > 9 var, compared exactly
    limit = 9 * var
    kept_v, kept_s, removed = [], [], []
    for seq, v in zip(series.sequences, series.values_ms):
        if (Fraction(v) - mu) ** 2 > limit:
            removed.append((seq, v))
        else:
            kept_v.append(v)
            kept_s.append(seq)
    kept = LatencySeries(tuple(kept_v), tuple(kept_s), series.removed + tuple(removed), series.n_lost)
    return kept, removed


def nearest_rank(sorted_values, pct: int) -> float:
    n = len(sorted_values)
    rank = -(-pct * n // 100)  # ceil(pct * n / 100) in exact integers
    return sorted_values[max(rank, 1) - 1]


def summarize(series: LatencySeries, label: str = "") -> LatencySummary:
    if not series.values_ms:
        raise EmptyLog("nothing to summarize")
    s = sorted(series.values_ms)
    n = len(s)
    mean, std = _mean_std(s)
    return LatencySummary(
        mean_ms=mean,
        p95_ms=nearest_rank(s, 95),
        max_ms=s[-1],
        min_ms=s[0],
        std_ms=std,
        median_ms=s[(n - 1) // 2],
        n_raw=n + len(series.removed),
        n_kept=n,
        n_removed=len(series.removed),
        single_sample=n == 1,
        label=label,
    )


def haptic_rtts(log: SessionLog) -> LatencySeries:
    vals, seqs = [], []
    for rec in log.sorted_records():
        if rec.haptic_recv_us is not None and rec.t_send_us is not None:
            vals.append((rec.haptic_recv_us - rec.t_send_us) / 1000)
            seqs.append(rec.seq)
    if not vals:
        raise NoHapticEvents("log holds no acknowledged gestures")
    return LatencySeries(tuple(vals), tuple(seqs))


def haptic_rtt(log: SessionLog) -> LatencySummary:
    """Gesture-frame send to haptic receipt, both on the controller clock."""
    return summarize(haptic_rtts(log), label="haptic round trip")


# -- full analysis -------------------------------------------------------------

RAW_LABEL = "one-way latency, raw clocks (absolute only on a shared timebase)"
NORM_LABEL = "one-way latency, median-offset normalized (spread only)"


@dataclass
class Analysis:
    counters: Counters
    raw: LatencySummary
    normalized: LatencySummary
    haptic: LatencySummary | None
    removed: list[tuple[int, float]] = field(default_factory=list)


def analyze(log: SessionLog) -> Analysis:
    raw = raw_latencies(log)
    norm = normalize_offset(raw)
    if len(raw) >= 2:
        raw_kept, removed = filter_3sigma(raw)
        norm_kept, _ = filter_3sigma(norm)
    else:
        raw_kept, removed, norm_kept = raw, [], norm
    try:
        hap = haptic_rtt(log)
    except NoHapticEvents:
        hap = None
    return Analysis(
        log.counters,
        summarize(raw_kept, RAW_LABEL),
        summarize(norm_kept, NORM_LABEL),
        hap,
        removed,
    )


# -- reports -------------------------------------------------------------------

TABLE_ROWS = (
    ("Mean", "mean_ms"),
    ("95th Percentile", "p95_ms"),
    ("Maximum", "max_ms"),
    ("Minimum", "min_ms"),
    ("Standard Deviation", "std_ms"),
)
FORMATS = ("text", "json", "csv")


def _table(summary: LatencySummary) -> list[str]:
    lines = []
    if summary.label:
        lines.append(f"[{summary.label}]")
    lines.append(f"{'Latency Metric':<22}{'Value (ms)':>12}")
    lines.append("-" * 34)
    for name, attr in TABLE_ROWS:
        lines.append(f"{name:<22}{getattr(summary, attr):>12.3f}")
    lines.append("-" * 34)
    lines.append(
        f"samples: raw {summary.n_raw}, kept {summary.n_kept}, removed {summary.n_removed}"
        + (" (single sample: std reported as 0)" if summary.single_sample else "")
    )
    return lines


def _csv_rows(section: str, summary: LatencySummary) -> list[list]:
    rows = [[section, name, repr(getattr(summary, attr))] for name, attr in TABLE_ROWS]
    rows += [
        [section, "Median", repr(summary.median_ms)],
        [section, "n_raw", summary.n_raw],
        [section, "n_kept", summary.n_kept],
        [section, "n_removed", summary.n_removed],
    ]
    return rows


def _csv(rows: list[list]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "metric", "value"])
    w.writerows(rows)
    return buf.getvalue().encode()


def report(summary: LatencySummary, fmt: str = "text") -> bytes:
    """Render one summary as a five-row text table, JSON or CSV."""
    if fmt == "text":
        return ("\n".join(_table(summary)) + "\n").encode()
    if fmt == "json":
        return (json.dumps(summary.as_dict(), indent=2, sort_keys=True) + "\n").encode()
    if fmt == "csv":
        return _csv(_csv_rows(summary.label or "latency", summary))
    raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")


def render_analysis(analysis: Analysis, fmt: str = "text") -> bytes:
    c = analysis.counters
    sections = [("raw", analysis.raw), ("normalized", analysis.normalized)]
    if analysis.haptic is not None:
        sections.append(("haptic_rtt", analysis.haptic))
    if fmt == "text":
        lines = [
            "frames: "
            + ", ".join(f"{k} {c.as_dict()[k]}" for k in ("sent", "received", "lost"))
            + f"; decode failures: auth {c.auth_failures}, checksum {c.checksum_failures},"
            f" malformed {c.malformed}",
            f"gestures {c.gestures}, haptic triggers sent {c.haptic_sent}, received {c.haptic_received}",
            "",
        ]
        for _, s in sections:
            lines += _table(s) + [""]
        if analysis.haptic is None:
            lines.append("haptic round trip: no acknowledged gestures")
        return ("\n".join(lines).rstrip("\n") + "\n").encode()
    if fmt == "json":
        doc = {"counters": c.as_dict(), **{k: s.as_dict() for k, s in sections}}
        doc["removed"] = [[seq, v] for seq, v in analysis.removed]
        return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()
    if fmt == "csv":
        rows = [["counters", k, v] for k, v in c.as_dict().items()]
        for name, s in sections:
            rows += _csv_rows(name, s)
        return _csv(rows)
    raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
