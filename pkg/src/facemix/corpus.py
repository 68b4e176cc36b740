"""Catalogs, subject pools, training manifests, and the synthetic corpus.

A catalog is a flat list of image records (real metadata or synthetic). From
it we build per-race subject pools ranked by available-image count, then draw
constrained manifests for the three sampling designs: single-race training,
the 89-point distribution sweep, and the dataset-growth comparison. For
desk-scale runs a Gaussian identity model generates both the catalog and the
feature vectors that stand in for face images.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .distributions import RACES, Race, RaceMix, SubjectCounts
from .seeds import stream

__all__ = [
    "ImageRecord",
    "PoolSubject",
    "SubjectPool",
    "ManifestEntry",
    "DatasetManifest",
    "SynthConfig",
    "FeatureStore",
    "build_subject_pool",
    "sample_manifest",
    "single_race_manifest",
    "growth_base_manifest",
    "grow_manifest",
    "synth_corpus",
    "read_catalog",
    "write_catalog",
    "read_manifest",
    "write_manifest",
]


@dataclass(frozen=True)
class ImageRecord:
    """One catalog row: an image of one subject, with optional geometry."""

    image_id: str
    subject_id: str
    race: Race
    path: str
    box: tuple[int, int, int, int] | None = None  # x, y, w, h
    size: tuple[int, int] | None = None  # img_w, img_h

    def __post_init__(self) -> None:
        if self.box is not None:
            if self.size is None:
                raise ValueError(f"{self.image_id}: face box without image size")
            x, y, w, h = self.box
            iw, ih = self.size
            if w <= 0 or h <= 0:
                raise ValueError(f"{self.image_id}: degenerate face box")
            if x < 0 or y < 0 or x + w > iw or y + h > ih:
                raise ValueError(f"{self.image_id}: face box outside image")


@dataclass(frozen=True)
class PoolSubject:
    subject_id: str
    race: Race
    image_ids: tuple[str, ...]


@dataclass(frozen=True)
class SubjectPool:
    """Per race: subjects ranked by descending image count, ties by id.

    ``shortfalls`` lists races whose ranked pool came up smaller than the
    requested cap, with the size actually available; requesting more subjects
    of such a race than exist is the caller's error, not the pool's.
    """

    subjects: dict[Race, tuple[PoolSubject, ...]]
    images_per_subject: int
    shortfalls: dict[Race, int] = field(default_factory=dict)

    def available(self, race: Race) -> int:
        return len(self.subjects.get(race, ()))


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    race: Race
    image_ids: tuple[str, ...]


@dataclass(frozen=True)
class DatasetManifest:
    """A concrete training set: who is in it and which of their images."""

    experiment: str
    design: str
    seed: int
    entries: tuple[ManifestEntry, ...]
    mix: RaceMix | None = None

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for e in self.entries:
            for iid in e.image_ids:
                if iid in seen:
                    raise ValueError(f"image {iid} appears twice in manifest")
                seen.add(iid)

    def subject_counts(self) -> dict[Race, int]:
        out = {r: 0 for r in RACES}
        for e in self.entries:
            out[e.race] += 1
        return out

    def image_counts(self) -> dict[Race, int]:
        out = {r: 0 for r in RACES}
        for e in self.entries:
            out[e.race] += len(e.image_ids)
        return out

    def image_ids(self) -> list[str]:
        return [iid for e in self.entries for iid in e.image_ids]


def build_subject_pool(
    catalog: list[ImageRecord], per_race_cap: int, images_per_subject: int
) -> SubjectPool:
    """Rank each race's subjects by image count and keep the best-covered.

    Subjects are sorted by descending image count with ties broken by
    ascending subject id, truncated to ``per_race_cap``, and dropped entirely
    if they have fewer than ``images_per_subject`` images. Image ids within a
    subject are sorted, so the pool does not depend on catalog row order.
    """
    if not catalog:
        raise ValueError("empty catalog")
    if per_race_cap < 1 or images_per_subject < 1:
        raise ValueError("cap and images_per_subject must be positive")

    by_subject: dict[str, list[ImageRecord]] = {}
    seen_images: set[str] = set()
    for rec in catalog:
        if rec.image_id in seen_images:
            raise ValueError(f"duplicate image id in catalog: {rec.image_id}")
        seen_images.add(rec.image_id)
        by_subject.setdefault(rec.subject_id, []).append(rec)

    ranked: dict[Race, list[PoolSubject]] = {r: [] for r in RACES}
    for sid, recs in by_subject.items():
        races = {rec.race for rec in recs}
        if len(races) != 1:
            raise ValueError(f"subject {sid} listed under multiple races")
        if len(recs) < images_per_subject:
            continue
        race = recs[0].race
        ranked[race].append(
            PoolSubject(sid, race, tuple(sorted(rec.image_id for rec in recs)))
        )

    subjects: dict[Race, tuple[PoolSubject, ...]] = {}
    shortfalls: dict[Race, int] = {}
    for race in RACES:
        order = sorted(ranked[race], key=lambda s: (-len(s.image_ids), s.subject_id))
        if len(order) < per_race_cap:
            shortfalls[race] = len(order)
        subjects[race] = tuple(order[:per_race_cap])
    return SubjectPool(subjects, images_per_subject, shortfalls)


def _choose_images(subject: PoolSubject, count: int, seed: int) -> tuple[str, ...]:
    # Per-subject stream: adding or removing other subjects never reshuffles
    # this subject's picks.
    if count > len(subject.image_ids):
        raise ValueError(
            f"subject {subject.subject_id} has {len(subject.image_ids)} images, "
            f"need {count}"
        )
    if count == len(subject.image_ids):
        return subject.image_ids
    rng = stream(seed, "images", subject.subject_id)
    picks = rng.choice(len(subject.image_ids), size=count, replace=False)
    return tuple(subject.image_ids[i] for i in sorted(picks))


def sample_manifest(
    pool: SubjectPool,
    counts: SubjectCounts,
    images_per_subject: int = 18,
    seed: int = 0,
    experiment: str = "mix",
    mix: RaceMix | None = None,
) -> DatasetManifest:
    """Draw the distribution-design training set for one subject-count row.

    The top ``counts[race]`` ranked subjects of each race are taken as-is;
    each contributes exactly ``images_per_subject`` images chosen without
    replacement by a per-subject RNG stream keyed on (seed, subject id).
    """
    entries: list[ManifestEntry] = []
    for race in RACES:
        need = counts[race]
        have = pool.available(race)
        if need > have:
            raise ValueError(
                f"{race.label}: pool has {have} subjects, manifest needs {need}"
            )
        for subject in pool.subjects[race][:need]:
            entries.append(
                ManifestEntry(
                    subject.subject_id,
                    race,
                    _choose_images(subject, images_per_subject, seed),
                )
            )
    return DatasetManifest(experiment, "distribution", seed, tuple(entries), mix)


def single_race_manifest(
    pool: SubjectPool,
    race: Race,
    subjects: int,
    seed: int = 0,
    images_per_subject: int | None = None,
    experiment: str | None = None,
) -> DatasetManifest:
    """Training set drawn from one race only.

    By default every selected subject contributes all of their images; pass
    ``images_per_subject`` to equalize instead.
    """
    have = pool.available(race)
    if subjects > have:
        raise ValueError(f"{race.label}: pool has {have} subjects, need {subjects}")
    entries = []
    for subject in pool.subjects[race][:subjects]:
        if images_per_subject is None:
            ids = subject.image_ids
        else:
            ids = _choose_images(subject, images_per_subject, seed)
        entries.append(ManifestEntry(subject.subject_id, race, ids))
    name = experiment or f"single-{race.label.lower()}"
    return DatasetManifest(name, "single-race", seed, tuple(entries))


def growth_base_manifest(
    pool: SubjectPool,
    subjects_per_race: int = 2500,
    images_per_subject: int = 10,
    seed: int = 0,
) -> DatasetManifest:
    """The balanced base set of the dataset-growth comparison.

    Defaults follow the study design (10 images for each of 2500 subjects per
    race); both must be even so the two growth modes add equal image totals.
    """
    if subjects_per_race % 2 or images_per_subject % 2:
        raise ValueError("growth base needs even subject and image counts")
    counts = SubjectCounts((subjects_per_race,) * 4)
    m = sample_manifest(pool, counts, images_per_subject, seed, experiment="growth-base")
    return replace(m, design="growth-base")


def grow_manifest(
    base: DatasetManifest,
    race: Race,
    mode: str,
    pool: SubjectPool,
    seed: int = 0,
) -> DatasetManifest:
    """Extend the growth base with extra data of one race.

    ``mode="more-images"`` adds half the base per-subject image count as new
    images to every existing subject of ``race``; ``mode="more-subjects"``
    adds half the base subject count as new subjects at the base image rate.
    Either way the added image total is identical and other races untouched.
    """
    if base.design != "growth-base":
        raise ValueError("grow_manifest requires a growth-base manifest")
    if mode not in ("more-images", "more-subjects"):
        raise ValueError(f"unknown growth mode: {mode!r}")

    per_subject = {len(e.image_ids) for e in base.entries}
    if len(per_subject) != 1:
        raise ValueError("growth base must have uniform images per subject")
    images_per_subject = per_subject.pop()
    base_subjects = [e for e in base.entries if e.race == race]
    n_subjects = len(base_subjects)

    entries = list(base.entries)
    if mode == "more-images":
        extra = images_per_subject // 2
        by_id = {s.subject_id: s for s in pool.subjects[race]}
        for i, e in enumerate(entries):
            if e.race != race:
                continue
            subject = by_id.get(e.subject_id)
            if subject is None:
                raise ValueError(f"subject {e.subject_id} missing from pool")
            spare = tuple(i for i in subject.image_ids if i not in set(e.image_ids))
            if len(spare) < extra:
                raise ValueError(
                    f"subject {e.subject_id}: {len(spare)} spare images, need {extra}"
                )
            rng = stream(seed, "grow", e.subject_id)
            picks = rng.choice(len(spare), size=extra, replace=False)
            added = tuple(spare[j] for j in sorted(picks))
            entries[i] = replace(e, image_ids=e.image_ids + added)
    else:
        extra_subjects = n_subjects // 2
        used = {e.subject_id for e in base_subjects}
        fresh = [s for s in pool.subjects[race] if s.subject_id not in used]
        if len(fresh) < extra_subjects:
            raise ValueError(
                f"{race.label}: {len(fresh)} spare subjects, need {extra_subjects}"
            )
        for subject in fresh[:extra_subjects]:
            entries.append(
                ManifestEntry(
                    subject.subject_id,
                    race,
                    _choose_images(subject, images_per_subject, seed),
                )
            )

    name = f"{base.experiment}+{mode}-{race.label.lower()}"
    return DatasetManifest(name, f"growth-{mode}", seed, tuple(entries))


# ---------------------------------------------------------------------------
# Synthetic corpus


@dataclass(frozen=True)
class SynthConfig:
    """Gaussian identity model for desk-scale runs.

    Race prototypes are drawn once from the master seed alone, so corpora
    that differ only in ``split`` (train vs test identities) share the same
    race geometry. ``unit_interval`` squashes features into [0,1] through a
    logistic so perfect-square dimensions can double as pixel grids.
    """

    dim: int = 16
    subjects_per_race: int = 200
    images_per_subject: int = 6
    sigma_between: float = 1.0
    sigma_within: float = 0.3
    race_spread: dict[Race, float] | None = None
    seed: int = 0
    split: str = "train"
    unit_interval: bool = False

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if self.sigma_between <= 0 or self.sigma_within <= 0:
            raise ValueError("spreads must be positive")
        if self.subjects_per_race < 1 or self.images_per_subject < 1:
            raise ValueError("need at least one subject and one image")


class FeatureStore:
    """Immutable image-id -> feature-vector table with a flat binary form.

    On disk: a blob of little-endian float32 values (count x dims, row-major)
    next to a JSON sidecar carrying dims, count, and the id order.
    """

    def __init__(self, ids: list[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or len(ids) != vectors.shape[0]:
            raise ValueError("need one vector per id")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate image ids in feature store")
        self._ids = list(ids)
        self._index = {iid: i for i, iid in enumerate(self._ids)}
        self._vectors = vectors
        self._vectors.setflags(write=False)

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    @property
    def dim(self) -> int:
        return self._vectors.shape[1]

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    def get(self, image_id: str) -> np.ndarray:
        try:
            return self._vectors[self._index[image_id]]
        except KeyError:
            raise KeyError(f"image id not in feature store: {image_id}") from None

    def matrix(self, image_ids: list[str]) -> np.ndarray:
        """Rows aligned with ``image_ids`` order, as float64."""
        rows = [self._index[i] for i in image_ids]
        return self._vectors[rows].astype(np.float64)

    def save(self, blob_path: str | Path) -> None:
        blob_path = Path(blob_path)
        blob_path.write_bytes(self._vectors.astype("<f4").tobytes())
        sidecar = {
            "dims": int(self._vectors.shape[1]),
            "count": int(self._vectors.shape[0]),
            "ids": self._ids,
        }
        Path(str(blob_path) + ".json").write_text(
            json.dumps(sidecar, sort_keys=True, separators=(",", ":")) + "\n"
        )

    @classmethod
    def load(cls, blob_path: str | Path) -> "FeatureStore":
        blob_path = Path(blob_path)
        sidecar = json.loads(Path(str(blob_path) + ".json").read_text())
        raw = np.frombuffer(blob_path.read_bytes(), dtype="<f4")
        vectors = raw.reshape(sidecar["count"], sidecar["dims"])
        return cls(sidecar["ids"], vectors)


def _synth_box(rng: np.random.Generator, side: int) -> tuple[int, int, int, int]:
    # Plausible face geometry: a roughly square box covering 35-85% of the
    # frame width, placed uniformly inside the frame.
    w = max(1, int(round(side * rng.uniform(0.35, 0.85))))
    h = max(1, min(side, int(round(w * rng.uniform(0.9, 1.15)))))
    w = min(w, side)
    x = int(rng.integers(0, side - w + 1))
    y = int(rng.integers(0, side - h + 1))
    return x, y, w, h


def synth_corpus(cfg: SynthConfig) -> tuple[list[ImageRecord], FeatureStore]:
    """Draw the synthetic catalog and its feature vectors.

    Identity means are Normal(prototype_race, sigma_between^2 I); images are
    Normal(identity, sigma_within^2 I), with the within-spread optionally
    scaled per race. Fully deterministic given the config.
    """
    protos = {
        r: stream(cfg.seed, "prototypes", r.label).normal(0.0, 1.0, size=cfg.dim)
        for r in RACES
    }
    root = math.isqrt(cfg.dim)
    side = root if root * root == cfg.dim else 128

    records: list[ImageRecord] = []
    ids: list[str] = []
    rows: list[np.ndarray] = []
    for race in RACES:
        spread = cfg.sigma_within
        if cfg.race_spread and race in cfg.race_spread:
            spread *= cfg.race_spread[race]
        for s in range(cfg.subjects_per_race):
            sid = f"{cfg.split}-{race.label.lower()}-{s:05d}"
            id_rng = stream(cfg.seed, "identity", cfg.split, race.label, s)
            mean = protos[race] + id_rng.normal(0.0, cfg.sigma_between, size=cfg.dim)
            for k in range(cfg.images_per_subject):
                iid = f"{sid}-{k:03d}"
                vec = mean + id_rng.normal(0.0, spread, size=cfg.dim)
                if cfg.unit_interval:
                    vec = 1.0 / (1.0 + np.exp(-vec))
                box_rng = stream(cfg.seed, "box", iid)
                records.append(
                    ImageRecord(
                        iid,
                        sid,
                        race,
                        path=f"synthetic://{iid}",
                        box=_synth_box(box_rng, side),
                        size=(side, side),
                    )
                )
                ids.append(iid)
                rows.append(vec)
    return records, FeatureStore(ids, np.stack(rows))


# ---------------------------------------------------------------------------
# On-disk formats

_CATALOG_COLUMNS = [
    "image_id",
    "subject_id",
    "race",
    "path",
    "box_x",
    "box_y",
    "box_w",
    "box_h",
    "img_w",
    "img_h",
]


def write_catalog(records: list[ImageRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CATALOG_COLUMNS)
        for rec in records:
            box = rec.box or ("", "", "", "")
            size = rec.size or ("", "")
            writer.writerow(
                [rec.image_id, rec.subject_id, rec.race.label, rec.path, *box, *size]
            )


def read_catalog(path: str | Path) -> list[ImageRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(_CATALOG_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"catalog missing columns: {sorted(missing)}")
        for row in reader:
            box = None
            size = None
            if row["img_w"]:
                size = (int(row["img_w"]), int(row["img_h"]))
            if row["box_x"]:
                box = tuple(int(row[f"box_{c}"]) for c in "xywh")
            records.append(
                ImageRecord(
                    row["image_id"],
                    row["subject_id"],
                    Race.from_label(row["race"]),
                    row["path"],
                    box,
                    size,
                )
            )
    return records


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """One JSON object per line: a header, then one record per subject."""
    header = {
        "kind": "manifest",
        "experiment": manifest.experiment,
        "design": manifest.design,
        "seed": manifest.seed,
        "mix": list(manifest.mix.to_strings()) if manifest.mix else None,
        "subjects": len(manifest.entries),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for e in manifest.entries:
            line = {
                "subject": e.subject_id,
                "race": e.race.label,
                "images": list(e.image_ids),
            }
            fh.write(json.dumps(line, sort_keys=True, separators=(",", ":")) + "\n")


def read_manifest(path: str | Path) -> DatasetManifest:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "manifest":
            raise ValueError(f"{path}: not a manifest file")
        entries = []
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            entries.append(
                ManifestEntry(
                    obj["subject"], Race.from_label(obj["race"]), tuple(obj["images"])
                )
            )
    mix = RaceMix.from_strings(header["mix"]) if header.get("mix") else None
    return DatasetManifest(
        header["experiment"], header["design"], header["seed"], tuple(entries), mix
    )
