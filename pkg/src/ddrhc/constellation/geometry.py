"""Coupling counts and link-lifetime statistics of a nominal pattern."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .orbits import WalkerPattern, los_range, positions


@dataclass(frozen=True)
class CouplingCount:
    radius: float
    min: int
    max: int
    mean: float


def coupling_counts(pattern: WalkerPattern, radii, times, anchor=(0.0, 0.0)) -> list[CouplingCount]:
    """Number of other satellites within each radius, over the sampled times."""
    pos = [positions(pattern.nominal(anchor, float(t))) for t in times]
    trees = [cKDTree(p) for p in pos]
    out = []
    for R in radii:
        counts = np.concatenate([
            np.array([len(c) - 1 for c in tree.query_ball_point(p, r=float(R))]) if R > 0
            else np.zeros(len(p), dtype=int)
            for tree, p in zip(trees, pos)
        ])
        out.append(CouplingCount(float(R), int(counts.min()), int(counts.max()), float(counts.mean())))
    return out


@dataclass(frozen=True)
class LinkLifetimes:
    durations: np.ndarray   # seconds, one per (sample time, coupled pair)
    censored: int           # pairs still in view at the look-back limit
    step: float

    @property
    def dt_min(self) -> float:
        return float(self.durations.min()) if self.durations.size else float("inf")

    @property
    def dt_max(self) -> float:
        return float(self.durations.max()) if self.durations.size else float("inf")

    def histogram(self, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
        return np.histogram(self.durations, bins=bins)


def link_lifetimes(pattern: WalkerPattern, radius: float, sample_times, lookback: float, step: float,
                   los: float | None = None, anchor=(0.0, 0.0)) -> LinkLifetimes:
    """Time each coupled pair has already spent within line of sight.

    At every sample time the pairs closer than ``radius`` are traced
    backwards in steps of ``step`` until their separation first exceeds
    the line-of-sight range.  The reported duration is the last look-back
    time still in view, so it never overstates the lifetime.
    """
    los = los_range(pattern.a) if los is None else los
    n_back = int(np.floor(lookback / step))
    lags = np.arange(n_back + 1) * step
    durs, censored = [], 0
    cache: dict[float, np.ndarray] = {}

    def pos_at(t: float) -> np.ndarray:
        p = cache.get(t)
        if p is None:
            p = cache[t] = positions(pattern.nominal(anchor, t))
        return p

    for ts in sample_times:
        ts = float(ts)
        pairs = np.array(sorted(cKDTree(pos_at(ts)).query_pairs(r=float(radius))), dtype=int).reshape(-1, 2)
        if not len(pairs):
            continue
        track = np.stack([pos_at(ts - float(lag)) for lag in lags])
        sep = np.linalg.norm(track[:, pairs[:, 0]] - track[:, pairs[:, 1]], axis=-1)
        out = sep > los
        seen = out.any(axis=0)
        first = np.where(seen, out.argmax(axis=0), n_back + 1)
        censored += int((~seen).sum())
        durs.append(lags[np.maximum(first - 1, 0)])
    arr = np.concatenate(durs) if durs else np.zeros(0)
    return LinkLifetimes(arr, censored, float(step))
