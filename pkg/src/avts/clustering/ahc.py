"""Threshold-stopped average-linkage agglomerative clustering."""

from __future__ import annotations

from typing import Iterable

import numpy as np

_TIE = 1e-12


def ahc(
    distance: np.ndarray,
    threshold: float,
    cannot_link: Iterable[int] = (),
) -> list[list[int]]:
    """Merge the closest pair of clusters while their average-linkage
    distance is ``<= threshold``.

    Ties go to the pair with the lexicographically smallest
    ``(min index of A, min index of B)``. Two clusters that both contain an
    index from ``cannot_link`` are never merged. Returns clusters as sorted
    index lists, ordered by their smallest index.
    """
    d = np.asarray(distance, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distance must be a square matrix")
    if np.isnan(d).any():
        raise ValueError("distance matrix contains NaN")
    if not np.allclose(d, d.T):
        raise ValueError("distance matrix must be symmetric")
    if d.size and np.abs(np.diag(d)).max() > 1e-12:
        raise ValueError("distance matrix must have a zero diagonal")
    locked = set(cannot_link)
    clusters = [[i] for i in range(d.shape[0])]
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                A, B = clusters[a], clusters[b]
                if locked.intersection(A) and locked.intersection(B):
                    continue
                link = float(d[np.ix_(A, B)].mean())
                if best is None or link < best[0] - _TIE:
                    best = (link, a, b)
        if best is None or best[0] > threshold + _TIE:
            break
        _, a, b = best
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
        clusters.sort(key=lambda c: c[0])
    return clusters
