"""Speech-activity interval arithmetic."""

from __future__ import annotations

from typing import Iterable, Sequence

Interval = tuple[float, float]


def merge_intervals(intervals: Iterable[Sequence[float]]) -> list[Interval]:
    out: list[list[float]] = []
    for s, e in sorted((float(a), float(b)) for a, b in intervals):
        if e <= s:
            continue
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


def total_duration(intervals: Iterable[Sequence[float]]) -> float:
    return sum(e - s for s, e in merge_intervals(intervals))


def intersection_duration(p: Iterable[Sequence[float]], q: Iterable[Sequence[float]]) -> float:
    a, b = merge_intervals(p), merge_intervals(q)
    i = j = 0
    total = 0.0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi > lo:
            total += hi - lo
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return total


def overlap_ratio(timeline_p: Iterable[Sequence[float]], timeline_q: Iterable[Sequence[float]]) -> float:
    """Simultaneous speech over the union of both speakers' speech (0 if neither speaks)."""
    p, q = merge_intervals(timeline_p), merge_intervals(timeline_q)
    inter = intersection_duration(p, q)
    union = total_duration(p) + total_duration(q) - inter
    return inter / union if union > 0 else 0.0
