"""Pair-matching evaluation and the fairness summary.

Verification is a binary task: decide whether two images show the same
person. Scores are cosine similarities between embeddings; the decision
threshold is selected per held-out fold by maximizing accuracy on the other
folds, which is the standard verification protocol for labeled pair files.
Accuracies are reported in percent; fairness is the population variance of
the four per-race accuracies (lower = fairer).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import FeatureStore, ImageRecord
from .distributions import RACES, Race, SubjectCounts
from .embednet import EmbeddingModel, embed_all
from .seeds import stream

__all__ = [
    "Pair",
    "PairSet",
    "EvalReport",
    "cosine_similarity",
    "pair_accuracy",
    "fairness_report",
    "evaluate",
    "make_pairs",
    "read_pairs",
    "write_pairs",
    "REPORT_COLUMNS",
    "report_row",
    "write_report_csv",
    "read_report_csv",
]


@dataclass(frozen=True)
class Pair:
    image_a: str
    image_b: str
    is_match: bool
    fold: int | None = None


@dataclass(frozen=True)
class PairSet:
    """Balanced match/non-match pairs per race, split into F folds.

    Folds are contiguous blocks of the per-race pair list unless pairs carry
    an explicit fold index, in which case every pair must carry one.
    """

    pairs: dict[Race, tuple[Pair, ...]]
    folds: int = 10

    def __post_init__(self) -> None:
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        for race, plist in self.pairs.items():
            n = len(plist)
            explicit = [p.fold is not None for p in plist]
            if any(explicit) and not all(explicit):
                raise ValueError(f"{race.label}: mixed explicit/implicit folds")
            if not all(explicit) and n % self.folds:
                raise ValueError(
                    f"{race.label}: {n} pairs not divisible into {self.folds} folds"
                )
            if all(explicit) and plist:
                bad = {p.fold for p in plist} - set(range(self.folds))
                if bad:
                    raise ValueError(f"{race.label}: fold ids out of range: {bad}")
            matches = sum(p.is_match for p in plist)
            if matches * 2 != n:
                raise ValueError(
                    f"{race.label}: {matches} matches vs {n - matches} non-matches"
                )


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(a @ b / (na * nb))


def _fold_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """Lowest threshold maximizing accuracy of (score >= t) on this data.

    Candidates are the distinct scores themselves plus accept-everything
    (-inf) and reject-everything (+inf) sentinels. Score-valued thresholds
    keep every decision a rank comparison, so any strictly increasing
    rescoring leaves all predictions (and the cross-validated accuracy)
    unchanged; midpoint or offset thresholds would not be transform-covariant
    for held-out points falling between or beyond them.
    """
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    match = labels[order].astype(np.int64)
    n = len(s)
    total_match = int(match.sum())
    # cum[i] = matches among the first i sorted scores
    cum = np.concatenate(([0], np.cumsum(match)))
    # candidate i = predict match for sorted positions i..n-1
    boundaries = [0]
    boundaries.extend(i for i in range(1, n) if s[i - 1] < s[i])
    boundaries.append(n)
    best_t = None
    best_correct = -1
    for i in boundaries:
        if i == 0:
            t = -math.inf
        elif i == n:
            t = math.inf
        else:
            t = s[i]
        correct = (total_match - cum[i]) + (i - cum[i])
        if correct > best_correct:
            best_correct = correct
            best_t = t
    return float(best_t)


def pair_accuracy(
    scores: np.ndarray,
    labels: np.ndarray,
    folds: int = 10,
    fold_ids: np.ndarray | None = None,
) -> tuple[float, list[float]]:
    """Cross-validated verification accuracy in percent, plus thresholds.

    Each fold is held out in turn; the threshold chosen on the remaining
    folds predicts match iff score >= threshold. Folds are contiguous blocks
    in input order unless ``fold_ids`` assigns them explicitly. The result is
    the unweighted mean of held-out fold accuracies, times 100.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n = len(scores)
    if n != len(labels):
        raise ValueError("scores and labels must align")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if fold_ids is None:
        if n % folds:
            raise ValueError(f"{n} pairs not divisible into {folds} folds")
        fold_ids = np.repeat(np.arange(folds), n // folds)
    else:
        fold_ids = np.asarray(fold_ids, dtype=np.intp)
        if len(fold_ids) != n:
            raise ValueError("fold ids must align with scores")
        if fold_ids.min() < 0 or fold_ids.max() >= folds:
            raise ValueError("fold id out of range")

    for f in range(folds):
        if not np.any(fold_ids == f):
            raise ValueError(f"fold {f} is empty")

    accs = []
    thresholds = []
    for f in range(folds):
        held = fold_ids == f
        t = _fold_threshold(scores[~held], labels[~held])
        pred = scores[held] >= t
        accs.append(float((pred == labels[held]).mean()))
        thresholds.append(t)
    return 100.0 * float(np.mean(accs)), thresholds


@dataclass(frozen=True)
class EvalReport:
    """Per-race accuracies (percent) with their mean and population variance."""

    per_race: dict[Race, float]
    mean: float
    variance: float
    metadata: dict = field(default_factory=dict)


def fairness_report(per_race_acc, metadata: dict | None = None) -> EvalReport:
    """Mean and population variance (divide by 4) of the 4 accuracies."""
    values = [float(v) for v in per_race_acc]
    if len(values) != len(RACES):
        raise ValueError("need one accuracy per race")
    if not all(np.isfinite(values)):
        raise ValueError("accuracies must be finite")
    mean = sum(values) / len(values)
    variance = sum((v - mean) ** 2 for v in values) / len(values)
    return EvalReport(
        {r: values[r] for r in RACES}, mean, variance, dict(metadata or {})
    )


def evaluate(
    model: EmbeddingModel,
    store: FeatureStore,
    pairs: PairSet,
    metadata: dict | None = None,
) -> EvalReport:
    """Embed, score, and fold-validate every race's pairs."""
    per_race = {}
    for race in RACES:
        plist = pairs.pairs.get(race, ())
        if not plist:
            raise ValueError(f"no pairs for {race.label}")
        ids = sorted({p.image_a for p in plist} | {p.image_b for p in plist})
        emb = embed_all(model, store, ids)
        row = {iid: i for i, iid in enumerate(ids)}
        norms = np.linalg.norm(emb, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero-norm embedding; cannot score pairs")
        unit = emb / norms[:, None]
        scores = np.array(
            [unit[row[p.image_a]] @ unit[row[p.image_b]] for p in plist]
        )
        labels = np.array([p.is_match for p in plist])
        explicit = plist[0].fold is not None
        fold_ids = np.array([p.fold for p in plist]) if explicit else None
        acc, _ = pair_accuracy(scores, labels, pairs.folds, fold_ids)
        per_race[race] = acc
    return fairness_report([per_race[r] for r in RACES], metadata)


def make_pairs(
    catalog: list[ImageRecord],
    per_race: int = 600,
    folds: int = 10,
    seed: int = 0,
) -> PairSet:
    """Draw balanced match/non-match pairs per race from a catalog.

    Per race: per_race/2 same-subject pairs and per_race/2 cross-subject
    pairs, deduplicated, arranged so each contiguous fold block is itself
    balanced. Deterministic given seed.
    """
    if per_race % (2 * folds):
        raise ValueError("per-race pair count must be divisible by 2 x folds")
    by_race: dict[Race, dict[str, list[str]]] = {r: {} for r in RACES}
    for rec in catalog:
        by_race[rec.race].setdefault(rec.subject_id, []).append(rec.image_id)
    for r in RACES:
        for sid in by_race[r]:
            by_race[r][sid].sort()

    out: dict[Race, tuple[Pair, ...]] = {}
    half = per_race // 2
    for race in RACES:
        subjects = sorted(by_race[race])
        multi = [s for s in subjects if len(by_race[race][s]) >= 2]
        if len(multi) < 1 or len(subjects) < 2:
            raise ValueError(f"{race.label}: too few subjects for pairs")
        rng = stream(seed, "pairs", race.label)
        seen: set[tuple[str, str]] = set()

        def draw(kind: str) -> Pair:
            for _ in range(10000):
                if kind == "match":
                    sid = multi[rng.integers(len(multi))]
                    imgs = by_race[race][sid]
                    i, j = rng.choice(len(imgs), size=2, replace=False)
                    a, b = imgs[i], imgs[j]
                else:
                    i, j = rng.choice(len(subjects), size=2, replace=False)
                    a = by_race[race][subjects[i]]
                    b = by_race[race][subjects[j]]
                    a = a[rng.integers(len(a))]
                    b = b[rng.integers(len(b))]
                key = (min(a, b), max(a, b))
                if key in seen:
                    continue
                seen.add(key)
                return Pair(a, b, kind == "match")
            raise ValueError(f"{race.label}: cannot draw enough distinct pairs")

        matches = [draw("match") for _ in range(half)]
        others = [draw("non") for _ in range(half)]
        block = half // folds
        arranged: list[Pair] = []
        for f in range(folds):
            arranged.extend(matches[f * block : (f + 1) * block])
            arranged.extend(others[f * block : (f + 1) * block])
        out[race] = tuple(arranged)
    return PairSet(out, folds)


def write_pairs(pairs: PairSet, path: str | Path) -> None:
    explicit = any(
        p.fold is not None for plist in pairs.pairs.values() for p in plist
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        cols = ["race", "image_a", "image_b", "is_match"]
        if explicit:
            cols.append("fold")
        writer.writerow(cols)
        for race in RACES:
            for p in pairs.pairs.get(race, ()):
                row = [race.label, p.image_a, p.image_b, int(p.is_match)]
                if explicit:
                    row.append(p.fold)
                writer.writerow(row)


def read_pairs(path: str | Path, folds: int = 10) -> PairSet:
    grouped: dict[Race, list[Pair]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            fold = int(row["fold"]) if row.get("fold") not in (None, "") else None
            grouped.setdefault(Race.from_label(row["race"]), []).append(
                Pair(row["image_a"], row["image_b"], bool(int(row["is_match"])), fold)
            )
    return PairSet({r: tuple(v) for r, v in grouped.items()}, folds)


# Appendix-style result row: subject counts, per-race accuracy, mean, variance.
REPORT_COLUMNS = (
    "african_subj",
    "asian_subj",
    "cauc_subj",
    "indian_subj",
    "acc_afr",
    "acc_asi",
    "acc_cau",
    "acc_ind",
    "acc_mean",
    "acc_var",
)


def report_row(counts: SubjectCounts, report: EvalReport) -> dict[str, str]:
    row = {c: str(counts[r]) for c, r in zip(REPORT_COLUMNS[:4], RACES)}
    for col, race in zip(REPORT_COLUMNS[4:8], RACES):
        row[col] = f"{report.per_race[race]:.6f}"
    row["acc_mean"] = f"{report.mean:.6f}"
    row["acc_var"] = f"{report.variance:.6f}"
    return row


def write_report_csv(rows: list[dict[str, str]], path: str | Path, columns=None) -> None:
    columns = tuple(columns or REPORT_COLUMNS)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def read_report_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
