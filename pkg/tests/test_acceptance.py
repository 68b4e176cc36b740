"""Acceptance suite: one test per shipped guarantee, each printing a verdict.

Run `pytest tests/test_acceptance.py -s` to see one PASS/FAIL line per
criterion. Criterion 1 fails honestly: the reference tables publish variances
computed before their accuracy columns were rounded to two decimals, so
recomputing from the rounded values cannot land inside the default tolerance
on every row (21 of 184 rows carry a larger rounding residue; all of them
pass at ±0.04). The check is kept strict rather than widened to match.
"""

from __future__ import annotations

import csv
import time
from dataclasses import replace
from importlib import resources

import numpy as np
import pytest

from facemix.augment import NoiseConfig, PixelImage, gaussian_kernel, inject_patch_blur
from facemix.clusteranalysis import ClusterConfig, intra_race_cosine, knn_membership
from facemix.distributions import RACES, enumerate_simplex_points, mix_to_counts
from facemix.evalproto import REPORT_COLUMNS, pair_accuracy
from facemix.seeds import stream
from facemix.harness import (
    ExperimentConfig,
    ResultsTable,
    TABLE_COLUMNS,
    emit_simplex_svg,
    mix_tag,
    run_experiment,
    verify_fixtures,
)
from oracles import nearest_neighbor_membership_oracle, threshold_accuracy_oracle
from test_embednet import ALL_HEADS, gradient_check
from test_harness import tiny_config

METRIC_COLUMNS = REPORT_COLUMNS[4:]


def _verdict(n: int, ok: bool, detail: str) -> None:
    print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {n}: {detail}"


def test_criterion_1_fixture_arithmetic_within_tolerance():
    t0 = time.perf_counter()
    report = verify_fixtures()
    elapsed = time.perf_counter() - t0
    worst = max(
        (abs(r.mean_diff) for r in report.rows),
        default=0.0,
    )
    worst = max(worst, max(abs(r.var_diff) for r in report.rows))
    ok = len(report.rows) == 184 and elapsed < 1.0 and report.passed
    _verdict(
        1,
        ok,
        f"{len(report.failures)} of {len(report.rows)} rows outside ±0.015, "
        f"worst diff {worst:.5f}, {elapsed:.2f}s",
    )


def _fixture_count_rows() -> set[tuple[int, ...]]:
    counts: set[tuple[int, ...]] = set()
    root = resources.files("facemix").joinpath("fixtures")
    for name in (
        "arcface_inner.csv",
        "arcface_outer.csv",
        "vggface2_inner.csv",
        "vggface2_outer.csv",
    ):
        text = root.joinpath(name).read_text()
        for row in csv.DictReader(text.splitlines()):
            counts.add(tuple(int(row[c]) for c in REPORT_COLUMNS[:4]))
    return counts


def test_criterion_2_design_enumeration_matches_reference_counts():
    t0 = time.perf_counter()
    mixes = enumerate_simplex_points()
    produced = {mix_to_counts(m, 5000).counts for m in mixes}
    reference = _fixture_count_rows()
    elapsed = time.perf_counter() - t0
    ok = (
        len(mixes) == 89
        and len(set(mixes)) == 89
        and produced == reference
        and elapsed < 1.0
    )
    _verdict(
        2,
        ok,
        f"{len(mixes)} mixes, {len(produced & reference)} of {len(reference)} "
        f"reference count rows reproduced bit-exactly, {elapsed:.2f}s",
    )


def _complete_mean_table(head: str = "arcface") -> ResultsTable:
    rows = []
    for i, mix in enumerate(enumerate_simplex_points()):
        row = {"design": "sweep", "head": head, "tag": mix_tag(mix), "trial": "mean"}
        for c in REPORT_COLUMNS[:4]:
            row[c] = "3"
        for j, c in enumerate(METRIC_COLUMNS):
            row[c] = f"{40.0 + i * 0.5 + j:.6f}"
        rows.append(row)
    return ResultsTable(TABLE_COLUMNS, rows, True)


def test_criterion_3_net_plot_has_181_markers_per_panel():
    svg = emit_simplex_svg(_complete_mean_table())
    panels = svg.split('<g id="panel-')[1:]
    counts = [chunk.count('class="pt"') for chunk in panels]
    single = emit_simplex_svg(_complete_mean_table(), metric="acc_var")
    ok = (
        len(counts) == 6
        and all(c == 181 for c in counts)
        and single.count('class="pt"') == 181
    )
    _verdict(3, ok, f"panel marker counts {counts}, single-metric 181")


def test_criterion_4_analytic_gradients_match_finite_differences():
    t0 = time.perf_counter()
    worst = 0.0
    for head in ALL_HEADS:
        worst = max(worst, gradient_check(head, range(20)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 30.0
    _verdict(
        4,
        ok,
        f"worst relative error {worst:.2e} over 4 heads x 20 seeds, {elapsed:.1f}s",
    )


def _threshold_instance(seed: int):
    rng = np.random.default_rng(seed)
    folds = int(rng.choice([2, 4, 5]))
    per_fold = int(rng.integers(4, 200 // folds + 1))
    n = folds * per_fold
    scores = rng.uniform(-2.0, 2.0, size=n)
    if rng.random() < 0.5:
        scores = np.round(scores, 1)  # force ties
    labels = rng.random(n) < 0.5
    fold_ids = rng.permutation(np.repeat(np.arange(folds), per_fold))
    return scores, labels, fold_ids, folds


def test_criterion_5_metrics_match_brute_force_oracles():
    threshold_ok = True
    for seed in range(50):
        scores, labels, fold_ids, folds = _threshold_instance(seed)
        got, _ = pair_accuracy(scores, labels, folds, fold_ids=fold_ids)
        want = threshold_accuracy_oracle(scores, labels, fold_ids)
        if got != pytest.approx(want, abs=1e-12):
            threshold_ok = False
            break

    knn_ok = True
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        groups = {r: rng.normal(size=(20, 6)) for r in RACES}
        cfg = ClusterConfig(k=1, samples_per_race=20, seed=seed)
        got_m = knn_membership(groups, cfg)
        want_m = nearest_neighbor_membership_oracle(groups)
        if not np.array_equal(got_m, want_m):
            knn_ok = False
            break

    ok = threshold_ok and knn_ok
    _verdict(
        5,
        ok,
        "50 threshold instances (≤200 pairs) and 10 nearest-neighbor instances "
        "(80 points) match exhaustive oracles",
    )


def test_criterion_6_metric_invariances():
    transform_ok = True
    for seed in range(5):
        scores, labels, fold_ids, folds = _threshold_instance(seed)
        base, _ = pair_accuracy(scores, labels, folds, fold_ids=fold_ids)
        for fn in (lambda s: 3.0 * s + 2.0, np.exp, lambda s: s**3):
            moved, _ = pair_accuracy(fn(scores), labels, folds, fold_ids=fold_ids)
            if moved != base:
                transform_ok = False

    rng = np.random.default_rng(42)
    groups = {r: rng.normal(size=(20, 5)) for r in RACES}
    cfg = ClusterConfig(k=3, samples_per_race=20, seed=0)
    base_m = knn_membership(groups, cfg)
    scale_ok = True
    for factor in (3.7, 0.01):
        scaled = knn_membership({r: factor * g for r, g in groups.items()}, cfg)
        if not np.array_equal(base_m, scaled):
            scale_ok = False

    flat = {r: np.tile(rng.normal(size=5), (8, 1)) for r in RACES}
    spreads = intra_race_cosine(flat)
    compact_ok = all(abs(v) <= 1e-12 for v in spreads.values())

    ok = transform_ok and scale_ok and compact_ok
    _verdict(
        6,
        ok,
        "accuracy invariant under increasing transforms, membership under "
        "rescaling, zero-spread compactness = 0",
    )


def _cell_edges(origin: int, extent: int, grid: int) -> list[int]:
    base = extent // grid
    return [origin + i * base for i in range(grid)] + [origin + extent]


def _confined_to_one_cell(
    before: np.ndarray, after: np.ndarray, box: tuple[int, int, int, int], grid: int
) -> bool:
    diff = before != after
    if diff.ndim == 3:
        diff = diff.any(axis=2)
    if not diff.any():
        return True  # a 1x1 cell blurs to itself
    rows = np.where(diff.any(axis=1))[0]
    cols = np.where(diff.any(axis=0))[0]
    x, y, w, h = box
    row_edges = _cell_edges(y, h, grid)
    col_edges = _cell_edges(x, w, grid)

    def one_cell(lo: int, hi: int, edges: list[int]) -> bool:
        for a, b in zip(edges, edges[1:]):
            if a <= lo and hi < b:
                return True
        return False

    return one_cell(rows[0], rows[-1], row_edges) and one_cell(cols[0], cols[-1], col_edges)


def test_criterion_7_patch_blur_locality_kernels_and_rates():
    rng = np.random.default_rng(7)
    cfg = NoiseConfig(p=1.0, grid=4, kmin=3, kmax=9, variance=1.5, seed=0)
    box = (2, 3, 19, 17)
    locality_ok = True
    for trial in range(40):
        pixels = rng.uniform(0.2, 0.8, size=(26, 26) if trial % 2 else (26, 26, 3))
        img = PixelImage(pixels)
        out = inject_patch_blur(img, box, cfg, stream("locality", trial))
        if not _confined_to_one_cell(pixels, out.pixels, box, cfg.grid):
            locality_ok = False

    kernel_ok = all(
        abs(gaussian_kernel(size, 1.5).sum() - 1.0) <= 1e-12
        for size in range(3, 23, 2)
    )

    rate_ok = True
    rates = {}
    base = PixelImage(rng.uniform(0.2, 0.8, size=(24, 24)))
    full = (0, 0, 24, 24)
    for p in (0.1, 0.3, 0.5):
        pcfg = NoiseConfig(p=p, grid=4, kmin=3, kmax=9, variance=1.5, seed=0)
        # the input object comes back unchanged iff no injection happened
        hits = sum(
            inject_patch_blur(base, full, pcfg, stream("rate", p, i)) is not base
            for i in range(10000)
        )
        rates[p] = hits / 10000
        if abs(rates[p] - p) > 0.02:
            rate_ok = False

    ok = locality_ok and kernel_ok and rate_ok
    _verdict(
        7,
        ok,
        f"locality exact over 40 trials, kernel sums within 1e-12, "
        f"injection rates {rates}",
    )


def test_criterion_8_default_scale_runs_finish_and_rank_sanely(tmp_path):
    sweep_cfg = ExperimentConfig(
        heads=("arcface",), trials=1, outdir=str(tmp_path / "sweep")
    )
    t0 = time.perf_counter()
    table = run_experiment(sweep_cfg)
    elapsed = time.perf_counter() - t0
    svg = (tmp_path / "sweep" / "sweep-arcface.svg").read_text()
    panels = svg.split('<g id="panel-')[1:]
    sweep_ok = (
        table.complete
        and elapsed < 1800.0
        and len(table.rows) == 89 * 3
        and (tmp_path / "sweep" / "sweep.csv").exists()
        and len(panels) == 6
        and all(chunk.count('class="pt"') == 181 for chunk in panels)
    )

    single_cfg = ExperimentConfig(
        design="single-race", heads=("arcface",), trials=1,
        outdir=str(tmp_path / "single"),
    )
    single = run_experiment(single_cfg)
    diag_wins = 0
    for race, own_col in zip(RACES, METRIC_COLUMNS[:4]):
        (row,) = single.select(tag=race.label, trial="mean")
        own = float(row[own_col])
        others = [float(row[c]) for c in METRIC_COLUMNS[:4] if c != own_col]
        diag_wins += own >= max(others)

    ok = sweep_ok and diag_wins >= 3
    _verdict(
        8,
        ok,
        f"89-mix sweep in {elapsed:.0f}s with full CSV+SVG, own-race accuracy "
        f"tops its row in {diag_wins} of 4 single-race runs",
    )


def test_criterion_9_reruns_are_byte_identical(tmp_path):
    artifacts = {}
    for leg in ("a", "b"):
        cfg = tiny_config(tmp_path / f"sweep-{leg}")
        run_experiment(cfg)
        artifacts[leg] = (
            (tmp_path / f"sweep-{leg}" / "sweep.csv").read_bytes(),
            (tmp_path / f"sweep-{leg}" / "sweep-arcface.svg").read_bytes(),
        )
    sweep_ok = artifacts["a"] == artifacts["b"]

    growth_csvs = []
    for leg in ("a", "b"):
        cfg = tiny_config(
            tmp_path / f"growth-{leg}",
            design="growth",
            growth_subjects_per_race=6,
            growth_images_per_subject=2,
        )
        run_experiment(cfg)
        growth_csvs.append((tmp_path / f"growth-{leg}" / "growth.csv").read_bytes())
    growth_ok = growth_csvs[0] == growth_csvs[1]

    ok = sweep_ok and growth_ok
    _verdict(9, ok, "sweep CSV+SVG and growth CSV byte-identical across reruns")
