"""Experiment orchestration: designs, results tables, plots, fixture checks.

Every design enumerates its work as an ordered list of cells, each keyed by a
stable id and computed from RNG streams derived from (master seed, design,
head, cell tag, trial, stage). Rows land in one CSV through an ordered
writer that checkpoints completed cells to a resume token, so an aborted run
leaves a valid prefix and resuming completes the byte-identical table.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .augment import NoiseConfig, augment_features
from .corpus import (
    FeatureStore,
    ImageRecord,
    SubjectPool,
    SynthConfig,
    build_subject_pool,
    grow_manifest,
    growth_base_manifest,
    read_catalog,
    sample_manifest,
    single_race_manifest,
    synth_corpus,
)
from .distributions import (
    RACES,
    Race,
    RaceMix,
    SubjectCounts,
    enumerate_simplex_points,
    mix_to_counts,
    net_layout,
)
from .embednet import TrainConfig, head_from_spec, train
from .evalproto import (
    REPORT_COLUMNS,
    PairSet,
    evaluate,
    fairness_report,
    make_pairs,
    read_pairs,
    report_row,
)
from .seeds import derive_seed
from .svgplot import net_panels_svg

__all__ = [
    "DESIGNS",
    "META_COLUMNS",
    "TABLE_COLUMNS",
    "OUTPUT_ROOT_ENV",
    "ExperimentConfig",
    "ResultsTable",
    "config_from_dict",
    "config_from_json",
    "config_to_dict",
    "config_digest",
    "apply_overrides",
    "resolve_outdir",
    "run_single_race",
    "run_distribution_sweep",
    "run_growth_study",
    "run_noise_study",
    "run_experiment",
    "emit_simplex_svg",
    "FixtureRow",
    "FixtureReport",
    "verify_fixtures",
]

DESIGNS = ("single-race", "sweep", "growth", "noise")
META_COLUMNS = ("design", "head", "tag", "trial")
TABLE_COLUMNS = META_COLUMNS + REPORT_COLUMNS
METRIC_COLUMNS = REPORT_COLUMNS[4:]
OUTPUT_ROOT_ENV = "FACEMIX_OUT"

_METRIC_TITLES = {
    "acc_afr": "African accuracy",
    "acc_asi": "Asian accuracy",
    "acc_cau": "Caucasian accuracy",
    "acc_ind": "Indian accuracy",
    "acc_mean": "Mean accuracy",
    "acc_var": "Accuracy variance",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run depends on.

    The corpus comes either from `synth` or from a catalog CSV plus feature
    blob; evaluation pairs come from `pairs` or are synthesized from the test
    catalog. The training seed and head inside `train` are placeholders: the
    harness rekeys both per cell.
    """

    design: str = "sweep"
    heads: tuple = ("arcface",)
    trials: int = 5
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig | None = field(default_factory=SynthConfig)
    catalog: str | None = None
    features: str | None = None
    test_catalog: str | None = None
    test_features: str | None = None
    pairs: str | None = None
    pairs_per_race: int = 600
    folds: int = 10
    total_subjects: int = 200
    subjects_per_race: int = 200
    images_per_subject: int = 6
    growth_subjects_per_race: int = 2500
    growth_images_per_subject: int = 10
    noise_grid: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    noise_cells: int = 4
    noise_kmin: int = 11
    noise_kmax: int = 21
    noise_variance: float = 1.5
    outdir: str = "results"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.design not in DESIGNS:
            raise ValueError(f"unknown design {self.design!r}; expected one of {DESIGNS}")
        if not self.heads:
            raise ValueError("need at least one loss head")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.synth is None and not (self.catalog and self.features):
            raise ValueError("need either a synth config or catalog+features paths")
        for spec in self.heads:
            head_from_spec(spec)  # fail fast on unknown heads

    def head_labels(self) -> list[str]:
        labels = []
        for spec in self.heads:
            kind = head_from_spec(spec).kind
            labels.append(kind if kind not in labels else f"{kind}{len(labels)}")
        return labels


def _train_to_dict(tc: TrainConfig) -> dict:
    # seed and head are rekeyed per cell, so they are not part of the config.
    return {
        "epochs": tc.epochs,
        "batch_size": tc.batch_size,
        "lr": tc.lr,
        "momentum": tc.momentum,
        "weight_decay": tc.weight_decay,
    }


def _synth_to_dict(sc: SynthConfig) -> dict:
    data = {
        "dim": sc.dim,
        "subjects_per_race": sc.subjects_per_race,
        "images_per_subject": sc.images_per_subject,
        "sigma_between": sc.sigma_between,
        "sigma_within": sc.sigma_within,
        "unit_interval": sc.unit_interval,
    }
    if sc.race_spread:
        data["race_spread"] = {r.label: sc.race_spread[r] for r in sorted(sc.race_spread)}
    return data


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """JSON-safe dict form; the canonical input to `config_digest`."""
    data = {
        "design": cfg.design,
        "heads": list(cfg.heads),
        "trials": cfg.trials,
        "train": _train_to_dict(cfg.train),
        "synth": None if cfg.synth is None else _synth_to_dict(cfg.synth),
        "catalog": cfg.catalog,
        "features": cfg.features,
        "test_catalog": cfg.test_catalog,
        "test_features": cfg.test_features,
        "pairs": cfg.pairs,
        "pairs_per_race": cfg.pairs_per_race,
        "folds": cfg.folds,
        "total_subjects": cfg.total_subjects,
        "subjects_per_race": cfg.subjects_per_race,
        "images_per_subject": cfg.images_per_subject,
        "growth_subjects_per_race": cfg.growth_subjects_per_race,
        "growth_images_per_subject": cfg.growth_images_per_subject,
        "noise_grid": list(cfg.noise_grid),
        "noise_cells": cfg.noise_cells,
        "noise_kmin": cfg.noise_kmin,
        "noise_kmax": cfg.noise_kmax,
        "noise_variance": cfg.noise_variance,
        "outdir": cfg.outdir,
        "seed": cfg.seed,
    }
    return data


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    unknown = set(data) - set(config_to_dict(ExperimentConfig()))
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    if "train" in data and data["train"] is not None:
        data["train"] = TrainConfig(**data["train"])
    if "synth" in data:
        synth = data["synth"]
        if synth is not None:
            synth = dict(synth)
            spread = synth.pop("race_spread", None)
            if spread is not None:
                synth["race_spread"] = {
                    Race.from_label(k): float(v) for k, v in spread.items()
                }
            synth = SynthConfig(**synth)
        data["synth"] = synth
    for key in ("heads", "noise_grid"):
        if key in data:
            data[key] = tuple(data[key])
    return ExperimentConfig(**data)


def config_from_json(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def apply_overrides(data: dict, overrides: dict[str, str]) -> dict:
    """Apply dotted-key overrides, JSON-parsing each value when possible.

    `{"train.lr": "0.01", "heads": '["arcface"]'}` touches nested fields; a
    value that fails to parse as JSON is kept as a plain string.
    """
    out = json.loads(json.dumps(data))  # deep copy, JSON types only
    for dotted, raw in overrides.items():
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        *parents, leaf = dotted.split(".")
        for part in parents:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ValueError(f"override {dotted!r} descends into non-object {part!r}")
            node = nxt
        node[leaf] = value
    return out


def config_digest(cfg: ExperimentConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def resolve_outdir(outdir: str | Path) -> Path:
    """Resolve a run's output directory, honoring the output-root env var."""
    path = Path(outdir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


# ---------------------------------------------------------------------------
# Results table and the resumable ordered writer


@dataclass
class ResultsTable:
    """Rows of an experiment CSV, in file order."""

    columns: tuple[str, ...]
    rows: list[dict[str, str]]
    complete: bool = True

    def select(self, **match: str) -> list[dict[str, str]]:
        return [r for r in self.rows if all(r[k] == v for k, v in match.items())]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.columns)
            writer.writeheader()
            writer.writerows(self.rows)

    @classmethod
    def read_csv(cls, path: str | Path) -> "ResultsTable":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ValueError(f"{path}: empty results file")
            return cls(tuple(reader.fieldnames), list(reader))


class _TableWriter:
    """Append-only CSV writer with a resume token.

    The token records the config digest and, per committed cell, its id and
    row count in commit order. Restarting with the same config skips
    committed cells after re-slicing their rows out of the partial CSV;
    restarting with a different config refuses to touch the files.
    """

    def __init__(self, csv_path: Path, columns: tuple[str, ...], digest: str):
        self.csv_path = csv_path
        self.token_path = Path(str(csv_path) + ".resume.json")
        self.columns = columns
        self.digest = digest
        self._rows_by_cell: dict[str, list[dict[str, str]]] = {}
        self._order: list[str] = []

        if self.token_path.exists():
            self._load()
        else:
            with open(self.csv_path, "w", newline="") as fh:
                csv.writer(fh).writerow(columns)
            self._write_token()

    def _load(self) -> None:
        token = json.loads(self.token_path.read_text())
        if token.get("digest") != self.digest:
            raise ValueError(
                f"{self.csv_path}: existing results were produced by a different "
                "config; use a fresh output directory"
            )
        with open(self.csv_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != self.columns:
                raise ValueError(f"{self.csv_path}: unexpected columns")
            rows = list(reader)
        taken = 0
        for cell_id, count in token["cells"]:
            chunk = rows[taken : taken + count]
            if len(chunk) != count:
                raise ValueError(f"{self.csv_path}: fewer rows than the resume token records")
            self._order.append(cell_id)
            self._rows_by_cell[cell_id] = chunk
            taken += count
        if taken != len(rows):
            raise ValueError(f"{self.csv_path}: {len(rows) - taken} rows beyond the resume token")

    def _write_token(self) -> None:
        payload = {
            "digest": self.digest,
            "cells": [[cid, len(self._rows_by_cell[cid])] for cid in self._order],
        }
        tmp = self.token_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload))
        os.replace(tmp, self.token_path)

    def done(self, cell_id: str) -> bool:
        return cell_id in self._rows_by_cell

    def rows_for(self, cell_id: str) -> list[dict[str, str]]:
        return self._rows_by_cell[cell_id]

    def commit(self, cell_id: str, rows: list[dict[str, str]]) -> None:
        if self.done(cell_id):
            raise ValueError(f"cell {cell_id!r} committed twice")
        with open(self.csv_path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.columns)
            writer.writerows(rows)
        self._order.append(cell_id)
        self._rows_by_cell[cell_id] = rows
        self._write_token()

    def all_rows(self) -> list[dict[str, str]]:
        return [row for cid in self._order for row in self._rows_by_cell[cid]]


# ---------------------------------------------------------------------------
# Shared run machinery


@dataclass
class _Workbench:
    train_records: list[ImageRecord]
    train_store: FeatureStore
    test_store: FeatureStore
    pairs: PairSet
    pool: SubjectPool


def _make_workbench(cfg: ExperimentConfig, pool_cap: int, pool_images: int) -> _Workbench:
    corpus_seed = derive_seed(cfg.seed, "corpus")
    if cfg.synth is not None:
        # Same corpus seed, different split: shared race prototypes, disjoint
        # identities, which is the train/test relationship the eval needs.
        train_records, train_store = synth_corpus(
            replace(cfg.synth, split="train", seed=corpus_seed)
        )
        test_records, test_store = synth_corpus(
            replace(cfg.synth, split="test", seed=corpus_seed)
        )
    else:
        train_records = read_catalog(cfg.catalog)
        train_store = FeatureStore.load(cfg.features)
        test_records = read_catalog(cfg.test_catalog or cfg.catalog)
        test_store = FeatureStore.load(cfg.test_features or cfg.features)

    if cfg.pairs:
        pairs = read_pairs(cfg.pairs, cfg.folds)
    else:
        pairs = make_pairs(
            test_records, cfg.pairs_per_race, cfg.folds, derive_seed(cfg.seed, "pairs")
        )
    pool = build_subject_pool(train_records, pool_cap, pool_images)
    return _Workbench(train_records, train_store, test_store, pairs, pool)


def _check_pool(pool: SubjectPool, needed: dict[Race, int]) -> None:
    for race, need in needed.items():
        have = pool.available(race)
        if have < need:
            raise ValueError(
                f"{race.label}: pool supplies {have} subjects, design needs {need}"
            )


def _counts_of(manifest) -> SubjectCounts:
    per_race = manifest.subject_counts()
    return SubjectCounts(tuple(per_race.get(r, 0) for r in RACES))


def _meta(cfg: ExperimentConfig, head: str, tag: str, trial: str) -> dict[str, str]:
    return {"design": cfg.design, "head": head, "tag": tag, "trial": trial}


def _aggregate(trial_rows: list[dict[str, str]], label: str) -> dict[str, str]:
    """Mean or population-sd row over a cell's trials."""
    first = trial_rows[0]
    out = {k: first[k] for k in META_COLUMNS}
    out["trial"] = label
    for col in REPORT_COLUMNS[:4]:
        values = {r[col] for r in trial_rows}
        if len(values) != 1:
            raise ValueError(f"{col} differs across trials: {sorted(values)}")
        out[col] = first[col]
    for col in METRIC_COLUMNS:
        vals = np.array([float(r[col]) for r in trial_rows])
        agg = vals.mean() if label == "mean" else vals.std()
        out[col] = f"{agg:.6f}"
    return out


def _delta_row(variant_mean: dict[str, str], base_mean: dict[str, str]) -> dict[str, str]:
    out = {k: variant_mean[k] for k in META_COLUMNS}
    out["trial"] = "delta"
    for col in REPORT_COLUMNS[:4]:
        out[col] = str(int(variant_mean[col]) - int(base_mean[col]))
    for col in METRIC_COLUMNS:
        out[col] = f"{float(variant_mean[col]) - float(base_mean[col]):.6f}"
    return out


class _Runner:
    """Walks a design's cells in order through the resumable writer."""

    def __init__(self, cfg: ExperimentConfig, csv_name: str):
        self.cfg = cfg
        self.outdir = resolve_outdir(cfg.outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.csv_path = self.outdir / csv_name
        self.writer = _TableWriter(self.csv_path, TABLE_COLUMNS, config_digest(cfg))
        self.budget: int | None = None

    def run(self, cells: list[tuple[str, object]]) -> bool:
        """Execute pending cells in order; False if the budget ran out."""
        for cell_id, fn in cells:
            if self.writer.done(cell_id):
                continue
            if self.budget is not None and self.budget <= 0:
                return False
            self.writer.commit(cell_id, fn())
            if self.budget is not None:
                self.budget -= 1
        return True

    def table(self, complete: bool) -> ResultsTable:
        return ResultsTable(TABLE_COLUMNS, self.writer.all_rows(), complete)


def _trial_tags(trials: int) -> list[str]:
    return [str(t) for t in range(1, trials + 1)]


def _cell_id(head: str, tag: str, part: str) -> str:
    return f"{head}|{tag}|{part}"


# ---------------------------------------------------------------------------
# Designs


def run_single_race(cfg: ExperimentConfig, max_cells: int | None = None) -> ResultsTable:
    """Train per-race models and evaluate each on all four race pair sets.

    Cells: heads x 4 train races x trials, each row reporting the 4 test-race
    accuracies; a mean and sd row follows every cell group. On completion a
    per-head grid CSV presents the 4x4 layout as "mean ± sd" text.
    """
    cfg = replace(cfg, design="single-race")
    wb = _make_workbench(cfg, cfg.subjects_per_race, cfg.images_per_subject)
    _check_pool(wb.pool, {r: cfg.subjects_per_race for r in RACES})
    runner = _Runner(cfg, "single-race.csv")
    runner.budget = max_cells

    cells: list[tuple[str, object]] = []
    for label, spec in zip(cfg.head_labels(), cfg.heads):
        head = head_from_spec(spec)
        for race in RACES:
            tag = race.label

            def trial_fn(t: str, race=race, label=label, head=head, tag=tag):
                sample_seed = derive_seed(cfg.seed, cfg.design, label, tag, t, "sample")
                train_seed = derive_seed(cfg.seed, cfg.design, label, tag, t, "train")
                manifest = single_race_manifest(
                    wb.pool,
                    race,
                    cfg.subjects_per_race,
                    seed=sample_seed,
                    images_per_subject=cfg.images_per_subject,
                )
                model = train(
                    manifest, wb.train_store, replace(cfg.train, seed=train_seed, head=head)
                )
                report = evaluate(model, wb.test_store, wb.pairs)
                return [_meta(cfg, label, tag, t) | report_row(_counts_of(manifest), report)]

            for t in _trial_tags(cfg.trials):
                cells.append((_cell_id(label, tag, t), lambda t=t, fn=trial_fn: fn(t)))
            cells.append((_cell_id(label, tag, "agg"), _make_agg(runner, label, tag, cfg.trials)))

    finished = runner.run(cells)
    table = runner.table(finished)
    if finished:
        for label in cfg.head_labels():
            _write_single_race_grid(table, label, runner.outdir / f"single-race-grid-{label}.csv")
    return table


def _make_agg(runner: _Runner, label: str, tag: str, trials: int):
    def agg_fn() -> list[dict[str, str]]:
        rows = [
            row
            for t in _trial_tags(trials)
            for row in runner.writer.rows_for(_cell_id(label, tag, t))
        ]
        return [_aggregate(rows, "mean"), _aggregate(rows, "sd")]

    return agg_fn


def _write_single_race_grid(table: ResultsTable, label: str, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["train_race"] + [r.label for r in RACES])
        for race in RACES:
            (mean_row,) = table.select(head=label, tag=race.label, trial="mean")
            (sd_row,) = table.select(head=label, tag=race.label, trial="sd")
            cells = [
                f"{float(mean_row[col]):.2f} ± {float(sd_row[col]):.2f}"
                for col in REPORT_COLUMNS[4:8]
            ]
            writer.writerow([race.label] + cells)


def mix_tag(mix: RaceMix) -> str:
    return "|".join(mix.to_strings())


def run_distribution_sweep(cfg: ExperimentConfig, max_cells: int | None = None) -> ResultsTable:
    """Train and evaluate one model per race-mix design point.

    Each of the 89 mixes is apportioned to `total_subjects`, sampled from the
    pool, trained, and evaluated; completion also renders the six-panel net
    SVG per head.
    """
    cfg = replace(cfg, design="sweep")
    wb = _make_workbench(cfg, cfg.total_subjects, cfg.images_per_subject)
    # Corner mixes put the whole total in one race.
    _check_pool(wb.pool, {r: cfg.total_subjects for r in RACES})
    runner = _Runner(cfg, "sweep.csv")
    runner.budget = max_cells

    mixes = enumerate_simplex_points()
    cells: list[tuple[str, object]] = []
    for label, spec in zip(cfg.head_labels(), cfg.heads):
        head = head_from_spec(spec)
        for mix in mixes:
            tag = mix_tag(mix)
            counts = mix_to_counts(mix, cfg.total_subjects)

            def trial_fn(t: str, mix=mix, counts=counts, label=label, head=head, tag=tag):
                sample_seed = derive_seed(cfg.seed, cfg.design, label, tag, t, "sample")
                train_seed = derive_seed(cfg.seed, cfg.design, label, tag, t, "train")
                manifest = sample_manifest(
                    wb.pool,
                    counts,
                    cfg.images_per_subject,
                    seed=sample_seed,
                    experiment="sweep",
                    mix=mix,
                )
                model = train(
                    manifest, wb.train_store, replace(cfg.train, seed=train_seed, head=head)
                )
                report = evaluate(model, wb.test_store, wb.pairs)
                return [_meta(cfg, label, tag, t) | report_row(counts, report)]

            for t in _trial_tags(cfg.trials):
                cells.append((_cell_id(label, tag, t), lambda t=t, fn=trial_fn: fn(t)))
            cells.append((_cell_id(label, tag, "agg"), _make_agg(runner, label, tag, cfg.trials)))

    finished = runner.run(cells)
    table = runner.table(finished)
    if finished:
        for label in cfg.head_labels():
            svg = emit_simplex_svg(table, metric=None, head=label)
            (runner.outdir / f"sweep-{label}.svg").write_text(svg)
    return table


_GROWTH_MODES = (("images", "more-images"), ("subjects", "more-subjects"))


def run_growth_study(cfg: ExperimentConfig, max_cells: int | None = None) -> ResultsTable:
    """Balanced base vs +50% data of one race, added two ways.

    Per head: the base cell, then per (race, mode) a variant cell whose
    manifest extends that trial's base manifest; after each variant's
    aggregate rows comes a delta row (variant mean minus base mean).
    """
    cfg = replace(cfg, design="growth")
    base_n = cfg.growth_subjects_per_race
    base_ips = cfg.growth_images_per_subject
    pool_cap = base_n + base_n // 2
    pool_images = base_ips + base_ips // 2
    wb = _make_workbench(cfg, pool_cap, pool_images)
    _check_pool(wb.pool, {r: pool_cap for r in RACES})
    runner = _Runner(cfg, "growth.csv")
    runner.budget = max_cells

    def base_manifest(label: str, t: str):
        seed = derive_seed(cfg.seed, cfg.design, label, "base", t, "sample")
        return growth_base_manifest(wb.pool, base_n, base_ips, seed=seed)

    cells: list[tuple[str, object]] = []
    for label, spec in zip(cfg.head_labels(), cfg.heads):
        head = head_from_spec(spec)

        def run_one(manifest, label: str, tag: str, t: str, head=head):
            train_seed = derive_seed(cfg.seed, cfg.design, label, tag, t, "train")
            model = train(
                manifest, wb.train_store, replace(cfg.train, seed=train_seed, head=head)
            )
            report = evaluate(model, wb.test_store, wb.pairs)
            return [_meta(cfg, label, tag, t) | report_row(_counts_of(manifest), report)]

        for t in _trial_tags(cfg.trials):
            cells.append(
                (
                    _cell_id(label, "base", t),
                    lambda t=t, label=label, go=run_one: go(
                        base_manifest(label, t), label, "base", t
                    ),
                )
            )
        cells.append((_cell_id(label, "base", "agg"), _make_agg(runner, label, "base", cfg.trials)))

        for race in RACES:
            for suffix, mode in _GROWTH_MODES:
                tag = f"{race.label.lower()}+{suffix}"

                def variant_fn(t: str, race=race, mode=mode, label=label, tag=tag, go=run_one):
                    seed = derive_seed(cfg.seed, cfg.design, label, tag, t, "sample")
                    manifest = grow_manifest(
                        base_manifest(label, t), race, mode, wb.pool, seed=seed
                    )
                    return go(manifest, label, tag, t)

                for t in _trial_tags(cfg.trials):
                    cells.append((_cell_id(label, tag, t), lambda t=t, fn=variant_fn: fn(t)))
                cells.append(
                    (_cell_id(label, tag, "agg"), _make_agg(runner, label, tag, cfg.trials))
                )
                cells.append(
                    (_cell_id(label, tag, "delta"), _make_delta(runner, label, tag, cfg.trials))
                )

    finished = runner.run(cells)
    return runner.table(finished)


def _make_delta(runner: _Runner, label: str, tag: str, trials: int):
    def delta_fn() -> list[dict[str, str]]:
        variant_mean = runner.writer.rows_for(_cell_id(label, tag, "agg"))[0]
        base_mean = runner.writer.rows_for(_cell_id(label, "base", "agg"))[0]
        return [_delta_row(variant_mean, base_mean)]

    return delta_fn


def run_noise_study(cfg: ExperimentConfig, max_cells: int | None = None) -> ResultsTable:
    """Balanced training under patch-blur injection at each probability.

    Sampling, training, and augmentation streams are keyed without the
    probability, so the p=0 rows coincide bit-exactly with an un-augmented
    baseline at the same master seed.
    """
    cfg = replace(cfg, design="noise")
    side = math.isqrt(cfg.synth.dim) if cfg.synth is not None else None
    if cfg.synth is not None:
        if side * side != cfg.synth.dim:
            raise ValueError(
                f"noise study views features as square images; synth dim {cfg.synth.dim} "
                "is not a perfect square"
            )
        if not cfg.synth.unit_interval:
            raise ValueError("noise study needs unit_interval synthetic features")
    for p in cfg.noise_grid:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"noise probability {p} outside [0, 1]")

    wb = _make_workbench(cfg, cfg.subjects_per_race, cfg.images_per_subject)
    _check_pool(wb.pool, {r: cfg.subjects_per_race for r in RACES})
    runner = _Runner(cfg, "noise.csv")
    runner.budget = max_cells

    balanced = SubjectCounts((cfg.subjects_per_race,) * len(RACES))
    cells: list[tuple[str, object]] = []
    for label, spec in zip(cfg.head_labels(), cfg.heads):
        head = head_from_spec(spec)
        for p in cfg.noise_grid:
            tag = f"p={p:g}"

            def trial_fn(t: str, p=p, label=label, head=head, tag=tag):
                # No tag in these paths: every p shares them, so only the
                # injection probability itself separates the runs.
                sample_seed = derive_seed(cfg.seed, cfg.design, label, t, "sample")
                train_seed = derive_seed(cfg.seed, cfg.design, label, t, "train")
                augment_seed = derive_seed(cfg.seed, cfg.design, label, t, "augment")
                noise = NoiseConfig(
                    p=p,
                    grid=cfg.noise_cells,
                    kmin=cfg.noise_kmin,
                    kmax=cfg.noise_kmax,
                    variance=cfg.noise_variance,
                    seed=augment_seed,
                )
                store = augment_features(wb.train_store, wb.train_records, noise)
                manifest = sample_manifest(
                    wb.pool,
                    balanced,
                    cfg.images_per_subject,
                    seed=sample_seed,
                    experiment="noise",
                )
                model = train(
                    manifest, store, replace(cfg.train, seed=train_seed, head=head)
                )
                report = evaluate(model, wb.test_store, wb.pairs)
                return [_meta(cfg, label, tag, t) | report_row(balanced, report)]

            for t in _trial_tags(cfg.trials):
                cells.append((_cell_id(label, tag, t), lambda t=t, fn=trial_fn: fn(t)))
            cells.append((_cell_id(label, tag, "agg"), _make_agg(runner, label, tag, cfg.trials)))

    finished = runner.run(cells)
    return runner.table(finished)


def run_experiment(cfg: ExperimentConfig, max_cells: int | None = None) -> ResultsTable:
    runners = {
        "single-race": run_single_race,
        "sweep": run_distribution_sweep,
        "growth": run_growth_study,
        "noise": run_noise_study,
    }
    return runners[cfg.design](cfg, max_cells=max_cells)


# ---------------------------------------------------------------------------
# Plot emission


def emit_simplex_svg(
    table: ResultsTable, metric: str | None = None, head: str | None = None
) -> str:
    """Render a sweep table's mean rows onto the tetrahedron net.

    `metric=None` renders all six panels (four per-race accuracies, mean,
    variance); otherwise one panel for the named report column. The table
    must cover every design mix for the chosen head.
    """
    heads = sorted({r["head"] for r in table.rows})
    if head is None:
        if len(heads) != 1:
            raise ValueError(f"table carries several heads {heads}; pick one")
        head = heads[0]
    if metric is not None and metric not in _METRIC_TITLES:
        raise ValueError(f"unknown metric {metric!r}; expected one of {sorted(_METRIC_TITLES)}")

    mean_rows = table.select(head=head, trial="mean")
    values_by_mix: dict[RaceMix, dict[str, float]] = {}
    for row in mean_rows:
        mix = RaceMix.from_strings(row["tag"].split("|"))
        values_by_mix[mix] = {col: float(row[col]) for col in METRIC_COLUMNS}

    mixes = enumerate_simplex_points()
    missing = [m for m in mixes if m not in values_by_mix]
    if missing:
        raise ValueError(
            f"incomplete sweep: no mean row for mix {missing[0].to_strings()} "
            f"({len(missing)} of {len(mixes)} missing)"
        )

    columns = list(METRIC_COLUMNS) if metric is None else [metric]
    panels = [
        (_METRIC_TITLES[col], {m: values_by_mix[m][col] for m in mixes}) for col in columns
    ]
    return net_panels_svg(panels, net_layout(mixes))


# ---------------------------------------------------------------------------
# Fixture verification


@dataclass(frozen=True)
class FixtureRow:
    """One reference row compared against recomputed mean/variance."""

    file: str
    index: int
    counts: tuple[int, int, int, int]
    published_mean: float
    published_var: float
    computed_mean: float
    computed_var: float

    @property
    def mean_diff(self) -> float:
        return self.computed_mean - self.published_mean

    @property
    def var_diff(self) -> float:
        return self.computed_var - self.published_var

    def within(self, tolerance: float) -> bool:
        return abs(self.mean_diff) <= tolerance and abs(self.var_diff) <= tolerance


@dataclass(frozen=True)
class FixtureReport:
    tolerance: float
    rows: tuple[FixtureRow, ...]

    @property
    def failures(self) -> tuple[FixtureRow, ...]:
        return tuple(r for r in self.rows if not r.within(self.tolerance))

    @property
    def passed(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        out = []
        for row in self.rows:
            status = "ok" if row.within(self.tolerance) else "FAIL"
            out.append(
                f"{status} {row.file}:{row.index} counts={row.counts} "
                f"mean {row.published_mean:.2f} (diff {row.mean_diff:+.5f}) "
                f"var {row.published_var:.2f} (diff {row.var_diff:+.5f})"
            )
        out.append(
            f"{len(self.rows) - len(self.failures)}/{len(self.rows)} rows within "
            f"±{self.tolerance:g}"
        )
        return out


def _fixture_files(path: str | Path | None) -> list[tuple[str, Path]]:
    if path is None:
        base = resources.files("facemix").joinpath("fixtures")
        with resources.as_file(base) as root:
            files = sorted(root.glob("*.csv"))
    else:
        given = Path(path)
        if given.is_dir():
            files = sorted(given.glob("*.csv"))
        else:
            files = [given]
    if not files:
        raise ValueError(f"no fixture CSVs found under {path!r}")
    return [(f.name, f) for f in files]


def verify_fixtures(
    path: str | Path | None = None, tolerance: float = 0.015
) -> FixtureReport:
    """Recompute mean/variance for every reference row and compare.

    Each fixture CSV carries per-race subject counts, per-race accuracies,
    and the mean/variance columns as originally reported; the check feeds
    the four accuracies through `fairness_report` and compares within
    `tolerance` either way.
    """
    rows: list[FixtureRow] = []
    for name, file in _fixture_files(path):
        with open(file, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(REPORT_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{name}: missing columns {sorted(missing)}")
            for index, raw in enumerate(reader):
                try:
                    counts = tuple(int(raw[c]) for c in REPORT_COLUMNS[:4])
                    accs = [float(raw[c]) for c in REPORT_COLUMNS[4:8]]
                    published_mean = float(raw["acc_mean"])
                    published_var = float(raw["acc_var"])
                except (TypeError, ValueError) as exc:
                    raise ValueError(f"{name} row {index}: malformed value ({exc})") from None
                report = fairness_report(accs)
                rows.append(
                    FixtureRow(
                        name,
                        index,
                        counts,
                        published_mean,
                        published_var,
                        report.mean,
                        report.variance,
                    )
                )
    if not rows:
        raise ValueError("fixture files contain no rows")
    return FixtureReport(tolerance, tuple(rows))
