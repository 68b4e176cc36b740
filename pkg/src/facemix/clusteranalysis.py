"""Representation-quality metrics: cosine compactness and k-NN membership.

Two views of how strongly a feature space clusters by race. The absolute
view measures each race's spread around its own mean vector; the relative
view asks, for a pooled sample, which race wins a distance-weighted vote
among each point's k nearest neighbors. Distances are cosine distances
(1 - cos), which equal inner-product distances on normalized features and,
unlike raw dot products, are nonnegative, so inverse-distance weights are
well defined.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distributions import RACES, Race
from .seeds import stream

__all__ = [
    "ClusterConfig",
    "ClusterReport",
    "intra_race_cosine",
    "knn_membership",
    "cluster_report",
    "write_cluster_json",
    "read_cluster_json",
    "write_cluster_csv",
]


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 20
    samples_per_race: int = 5000
    seed: int = 0
    epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.samples_per_race < self.k + 1:
            raise ValueError("need at least k+1 samples per race")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class ClusterReport:
    """Per-race compactness plus the 4x4 assigned-race fraction matrix."""

    compactness: dict[Race, float]
    membership: np.ndarray  # rows = true race, columns = assigned race

    def __post_init__(self) -> None:
        m = np.asarray(self.membership, dtype=np.float64)
        if m.shape != (len(RACES), len(RACES)):
            raise ValueError("membership must be 4x4")
        if np.any(m < 0) or np.any(m > 1):
            raise ValueError("membership entries must lie in [0,1]")
        if np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("membership rows must sum to 1")
        object.__setattr__(self, "membership", m)


def intra_race_cosine(groups: dict[Race, np.ndarray]) -> dict[Race, float]:
    """Mean of 1 - cos(x, mu_race) per race, mu_race the raw mean vector."""
    out = {}
    for race in RACES:
        x = np.asarray(groups[race], dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"{race.label}: need a nonempty embedding matrix")
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0):
            raise ValueError(f"{race.label}: zero-norm embedding")
        mu = x.mean(axis=0)
        mu_norm = np.linalg.norm(mu)
        if mu_norm == 0:
            raise ValueError(f"{race.label}: zero mean vector")
        cos = (x @ mu) / (norms * mu_norm)
        out[race] = float(np.mean(1.0 - cos))
    return out


def _assignments(unit: np.ndarray, races: np.ndarray, k: int, epsilon: float) -> np.ndarray:
    """Weighted k-NN race per pooled point, self excluded, blockwise."""
    n = unit.shape[0]
    assigned = np.empty(n, dtype=np.intp)
    block = max(1, min(n, 2_000_000 // max(n, 1)))
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        d = 1.0 - unit[lo:hi] @ unit.T
        d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        # stable sort: distance ties fall back to lower pool index
        nbr = np.argsort(d, axis=1, kind="stable")[:, :k]
        w = 1.0 / np.maximum(np.take_along_axis(d, nbr, axis=1), epsilon)
        votes = np.zeros((hi - lo, len(RACES)))
        for c in range(len(RACES)):
            votes[:, c] = np.where(races[nbr] == c, w, 0.0).sum(axis=1)
        # argmax takes the first maximum: canonical race order breaks ties
        assigned[lo:hi] = votes.argmax(axis=1)
    return assigned


def knn_membership(groups: dict[Race, np.ndarray], cfg: ClusterConfig) -> np.ndarray:
    """Fraction of each race's sample assigned to each race by k-NN voting.

    samples_per_race points are drawn per race without replacement, pooled,
    and each is assigned the race with the largest sum of 1/max(d, epsilon)
    over its k nearest neighbors (itself excluded).
    """
    sampled = []
    races = []
    for race in RACES:
        x = np.asarray(groups[race], dtype=np.float64)
        if x.shape[0] < cfg.samples_per_race:
            raise ValueError(
                f"{race.label}: {x.shape[0]} embeddings, "
                f"need {cfg.samples_per_race}"
            )
        rng = stream(cfg.seed, "knn-sample", race.label)
        idx = rng.choice(x.shape[0], size=cfg.samples_per_race, replace=False)
        sampled.append(x[np.sort(idx)])
        races.append(np.full(cfg.samples_per_race, int(race), dtype=np.intp))
    pooled = np.concatenate(sampled)
    races = np.concatenate(races)

    norms = np.linalg.norm(pooled, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm embedding in k-NN pool")
    unit = pooled / norms[:, None]

    assigned = _assignments(unit, races, cfg.k, cfg.epsilon)
    m = np.zeros((len(RACES), len(RACES)))
    for r in RACES:
        rows = assigned[races == int(r)]
        for c in RACES:
            m[r, c] = float(np.mean(rows == int(c)))
    return m


def cluster_report(groups: dict[Race, np.ndarray], cfg: ClusterConfig) -> ClusterReport:
    return ClusterReport(intra_race_cosine(groups), knn_membership(groups, cfg))


def write_cluster_json(report: ClusterReport, path: str | Path) -> None:
    doc = {
        "compactness": {r.label: report.compactness[r] for r in RACES},
        "membership": [[float(v) for v in row] for row in report.membership],
        "races": [r.label for r in RACES],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_cluster_json(path: str | Path) -> ClusterReport:
    doc = json.loads(Path(path).read_text())
    compact = {Race.from_label(k): float(v) for k, v in doc["compactness"].items()}
    return ClusterReport(compact, np.array(doc["membership"], dtype=np.float64))


def write_cluster_csv(report: ClusterReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["race", "compactness", *(f"to_{r.label.lower()}" for r in RACES)])
        for r in RACES:
            writer.writerow(
                [
                    r.label,
                    f"{report.compactness[r]:.9g}",
                    *(f"{report.membership[r, c]:.9g}" for c in RACES),
                ]
            )
