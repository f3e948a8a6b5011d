"""Self-monitoring records and the windowed report over them.

Monitoring data is ordinary data: records are published as normal tuples
into a reserved monitoring table backed by a history producer, so the same
query machinery that serves user tables serves the system's own health.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

MONITORING_SQL = (
    "CREATE TABLE monitoring (component STRING, metric STRING, value REAL, ts TIMESTAMP)"
)
MONITORING_KEY = ["component", "metric"]

METRICS = ("responseTimeMs", "available", "infoAgeMs", "archiverLag")


@dataclass(frozen=True)
class SelfMonitoringRecord:
    component: str
    metric: str
    value: float
    ts: int

    def as_binding(self) -> dict:
        return {"component": self.component, "metric": self.metric,
                "value": float(self.value), "ts": self.ts}


@dataclass(frozen=True)
class WindowSummary:
    component: str
    window_start: int
    window_end: int
    availability: float | None
    latency_p50: float | None
    latency_p95: float | None
    max_info_age_ms: float | None
    max_lag: float | None


def _percentile(values: list[float], fraction: float) -> float:
    """Linear interpolation between closest ranks (inclusive)."""
    ordered = sorted(values)
    if len(ordered) == 1:
        return ordered[0]
    pos = fraction * (len(ordered) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(ordered) - 1)
    frac = pos - lo
    return ordered[lo] * (1 - frac) + ordered[hi] * frac


def summarize(records: list[SelfMonitoringRecord], window_ms: int) -> list[WindowSummary]:
    """Per component per window (anchored at t=0): availability fraction,
    latency percentiles, worst information age and archiver lag."""
    if window_ms <= 0:
        raise ValueError("window must be positive")
    buckets: dict[tuple[str, int], dict[str, list[float]]] = {}
    for r in records:
        window = r.ts // window_ms
        slot = buckets.setdefault((r.component, window), {})
        slot.setdefault(r.metric, []).append(float(r.value))
    out = []
    for (component, window) in sorted(buckets):
        slot = buckets[(component, window)]
        avail = slot.get("available")
        latency = slot.get("responseTimeMs")
        age = slot.get("infoAgeMs")
        lag = slot.get("archiverLag")
        out.append(WindowSummary(
            component=component,
            window_start=window * window_ms,
            window_end=(window + 1) * window_ms,
            availability=None if not avail else sum(avail) / len(avail),
            latency_p50=None if not latency else _percentile(latency, 0.50),
            latency_p95=None if not latency else _percentile(latency, 0.95),
            max_info_age_ms=None if not age else max(age),
            max_lag=None if not lag else max(lag),
        ))
    return out


def summaries_to_csv(summaries: list[WindowSummary]) -> str:
    buf = io.StringIO()
    buf.write("component,window_start,window_end,availability,"
              "latency_p50,latency_p95,max_info_age_ms,max_lag\n")
    for s in summaries:
        fields = [
            s.component, s.window_start, s.window_end,
            "" if s.availability is None else f"{s.availability:.6g}",
            "" if s.latency_p50 is None else f"{s.latency_p50:.6g}",
            "" if s.latency_p95 is None else f"{s.latency_p95:.6g}",
            "" if s.max_info_age_ms is None else f"{s.max_info_age_ms:.6g}",
            "" if s.max_lag is None else f"{s.max_lag:.6g}",
        ]
        buf.write(",".join(str(f) for f in fields) + "\n")
    return buf.getvalue()
