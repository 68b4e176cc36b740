"""Subject pools, manifests, the synthetic corpus, and on-disk formats."""

from __future__ import annotations

import numpy as np
import pytest

from facemix.corpus import (
    DatasetManifest,
    FeatureStore,
    ImageRecord,
    ManifestEntry,
    SynthConfig,
    build_subject_pool,
    grow_manifest,
    growth_base_manifest,
    read_catalog,
    read_manifest,
    sample_manifest,
    single_race_manifest,
    synth_corpus,
    write_catalog,
    write_manifest,
)
from facemix.distributions import (
    RACES,
    UNIFORM_MIX,
    Race,
    SubjectCounts,
    enumerate_simplex_points,
    mix_to_counts,
)


def _catalog(subjects_per_race: int, images: int | list[int]) -> list[ImageRecord]:
    records = []
    for race in RACES:
        for s in range(subjects_per_race):
            sid = f"{race.label.lower()}{s:03d}"
            n = images if isinstance(images, int) else images[s % len(images)]
            for k in range(n):
                records.append(
                    ImageRecord(f"{sid}-{k:02d}", sid, race, f"/img/{sid}/{k}.jpg")
                )
    return records


def test_pool_matches_sort_and_filter_oracle():
    catalog = _catalog(9, images=[1, 2, 3, 4, 5, 6, 7, 8, 9])
    cap, ips = 5, 4
    pool = build_subject_pool(catalog, cap, ips)

    by_subject: dict[str, list[ImageRecord]] = {}
    for rec in catalog:
        by_subject.setdefault(rec.subject_id, []).append(rec)
    for race in RACES:
        eligible = [
            (sid, recs)
            for sid, recs in by_subject.items()
            if recs[0].race == race and len(recs) >= ips
        ]
        eligible.sort(key=lambda kv: (-len(kv[1]), kv[0]))
        expected = [sid for sid, _ in eligible[:cap]]
        assert [s.subject_id for s in pool.subjects[race]] == expected
        for s in pool.subjects[race]:
            assert list(s.image_ids) == sorted(s.image_ids)
    assert pool.shortfalls == {}
    assert pool.available(Race.AFRICAN) == cap

    tight = build_subject_pool(catalog, 8, 4)
    # only 6 of 9 subjects per race have >= 4 images
    assert tight.shortfalls == {r: 6 for r in RACES}


def test_pool_ignores_catalog_row_order():
    catalog = _catalog(6, images=[2, 3, 4, 5, 6, 7])
    pool = build_subject_pool(catalog, 4, 3)
    shuffled = list(reversed(catalog))
    assert build_subject_pool(shuffled, 4, 3) == pool


def test_pool_validation():
    with pytest.raises(ValueError):
        build_subject_pool([], 4, 3)
    catalog = _catalog(2, 3)
    with pytest.raises(ValueError, match="duplicate image id"):
        build_subject_pool(catalog + [catalog[0]], 4, 3)
    turncoat = ImageRecord("african000-99", "african000", Race.ASIAN, "/x.jpg")
    with pytest.raises(ValueError, match="multiple races"):
        build_subject_pool(catalog + [turncoat], 4, 3)
    with pytest.raises(ValueError):
        build_subject_pool(catalog, 0, 3)


def test_sample_manifest_over_full_design():
    pool = build_subject_pool(_catalog(10, 6), 10, 4)
    for mix in enumerate_simplex_points():
        counts = mix_to_counts(mix, 8)
        manifest = sample_manifest(pool, counts, 4, seed=11, mix=mix)
        assert manifest.subject_counts() == {r: counts[r] for r in RACES}
        assert manifest.image_counts() == {r: 4 * counts[r] for r in RACES}
        assert manifest.mix == mix
        for e in manifest.entries:
            assert len(e.image_ids) == 4
            assert list(e.image_ids) == sorted(e.image_ids)


def test_sample_manifest_takes_ranked_prefix():
    pool = build_subject_pool(_catalog(10, 6), 10, 4)
    counts = SubjectCounts((3, 0, 1, 2))
    manifest = sample_manifest(pool, counts, 4, seed=0)
    for race in RACES:
        got = [e.subject_id for e in manifest.entries if e.race == race]
        want = [s.subject_id for s in pool.subjects[race][: counts[race]]]
        assert got == want


def test_sample_manifest_seed_behavior():
    pool = build_subject_pool(_catalog(8, 6), 8, 4)
    counts = mix_to_counts(UNIFORM_MIX, 8)
    a = sample_manifest(pool, counts, 4, seed=5)
    b = sample_manifest(pool, counts, 4, seed=5)
    c = sample_manifest(pool, counts, 4, seed=6)
    assert a == b
    assert a != c  # different seed reshuffles the per-subject image picks
    for e in a.entries:
        subject = next(s for s in pool.subjects[e.race] if s.subject_id == e.subject_id)
        assert set(e.image_ids) <= set(subject.image_ids)


def test_sample_manifest_rejects_oversized_request():
    pool = build_subject_pool(_catalog(4, 6), 4, 4)
    with pytest.raises(ValueError, match="pool has 4 subjects"):
        sample_manifest(pool, SubjectCounts((5, 0, 0, 0)), 4)


def test_single_race_manifest():
    pool = build_subject_pool(_catalog(6, 5), 6, 3)
    m = single_race_manifest(pool, Race.CAUCASIAN, 4, seed=2)
    assert m.design == "single-race"
    assert m.experiment == "single-caucasian"
    assert {e.race for e in m.entries} == {Race.CAUCASIAN}
    # default keeps every image of each selected subject
    assert all(len(e.image_ids) == 5 for e in m.entries)
    trimmed = single_race_manifest(pool, Race.CAUCASIAN, 4, seed=2, images_per_subject=3)
    assert all(len(e.image_ids) == 3 for e in trimmed.entries)
    with pytest.raises(ValueError):
        single_race_manifest(pool, Race.CAUCASIAN, 7)


def test_growth_modes_add_equal_image_totals():
    pool = build_subject_pool(_catalog(8, 4), 8, 2)
    base = growth_base_manifest(pool, subjects_per_race=4, images_per_subject=2, seed=3)
    assert base.design == "growth-base"
    base_images = sum(base.image_counts().values())

    for race in RACES:
        more_img = grow_manifest(base, race, "more-images", pool, seed=3)
        more_sub = grow_manifest(base, race, "more-subjects", pool, seed=3)

        for grown in (more_img, more_sub):
            assert sum(grown.image_counts().values()) == base_images + 4
            for other in RACES:
                if other != race:
                    assert grown.image_counts()[other] == base.image_counts()[other]

        # more-images keeps the roster, more-subjects extends it
        assert more_img.subject_counts() == base.subject_counts()
        assert more_sub.subject_counts()[race] == base.subject_counts()[race] + 2
        assert more_sub.entries[: len(base.entries)] == base.entries
        base_ids = {e.subject_id for e in base.entries if e.race == race}
        grown_ids = {e.subject_id for e in more_img.entries if e.race == race}
        assert grown_ids == base_ids
        for e, be in zip(more_img.entries, base.entries):
            assert e.image_ids[: len(be.image_ids)] == be.image_ids


def test_growth_validation():
    pool = build_subject_pool(_catalog(8, 4), 8, 2)
    with pytest.raises(ValueError, match="even"):
        growth_base_manifest(pool, subjects_per_race=3, images_per_subject=2)
    with pytest.raises(ValueError, match="even"):
        growth_base_manifest(pool, subjects_per_race=4, images_per_subject=3)
    base = growth_base_manifest(pool, subjects_per_race=4, images_per_subject=2)
    with pytest.raises(ValueError, match="unknown growth mode"):
        grow_manifest(base, Race.ASIAN, "more-coffee", pool)
    plain = sample_manifest(pool, SubjectCounts((1, 1, 1, 1)), 2)
    with pytest.raises(ValueError, match="growth-base"):
        grow_manifest(plain, Race.ASIAN, "more-images", pool)


def test_manifest_rejects_duplicate_images():
    entry = ManifestEntry("s1", Race.AFRICAN, ("a", "b"))
    clash = ManifestEntry("s2", Race.ASIAN, ("b", "c"))
    with pytest.raises(ValueError, match="appears twice"):
        DatasetManifest("x", "distribution", 0, (entry, clash))


def test_image_record_box_validation():
    ImageRecord("i", "s", Race.ASIAN, "/p", box=(0, 0, 4, 4), size=(4, 4))
    with pytest.raises(ValueError, match="without image size"):
        ImageRecord("i", "s", Race.ASIAN, "/p", box=(0, 0, 4, 4))
    with pytest.raises(ValueError, match="outside image"):
        ImageRecord("i", "s", Race.ASIAN, "/p", box=(1, 0, 4, 4), size=(4, 4))
    with pytest.raises(ValueError, match="degenerate"):
        ImageRecord("i", "s", Race.ASIAN, "/p", box=(0, 0, 0, 4), size=(4, 4))


def test_catalog_round_trip(tmp_path):
    records, _ = synth_corpus(SynthConfig(dim=9, subjects_per_race=3, images_per_subject=2))
    plain = [
        ImageRecord("bare", "s9", Race.INDIAN, "/bare.jpg"),
    ]
    path = tmp_path / "catalog.csv"
    write_catalog(records + plain, path)
    assert read_catalog(path) == records + plain
    bad = tmp_path / "bad.csv"
    bad.write_text("image_id,subject_id\n")
    with pytest.raises(ValueError, match="missing columns"):
        read_catalog(bad)


def test_manifest_round_trip(tmp_path):
    pool = build_subject_pool(_catalog(6, 5), 6, 3)
    manifest = sample_manifest(pool, SubjectCounts((2, 1, 0, 3)), 3, seed=9, mix=UNIFORM_MIX)
    path = tmp_path / "m.jsonl"
    write_manifest(manifest, path)
    assert read_manifest(path) == manifest

    path.write_text('{"kind":"catalog"}\n')
    with pytest.raises(ValueError, match="not a manifest"):
        read_manifest(path)


def test_feature_store_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ids = [f"img{i}" for i in range(7)]
    store = FeatureStore(ids, rng.normal(size=(7, 5)).astype(np.float32))
    blob = tmp_path / "feat.f32"
    store.save(blob)
    loaded = FeatureStore.load(blob)
    assert loaded.ids == ids
    assert loaded.dim == 5
    assert np.array_equal(loaded.matrix(ids), store.matrix(ids))
    loaded.save(tmp_path / "again.f32")
    assert (tmp_path / "again.f32").read_bytes() == blob.read_bytes()


def test_feature_store_access():
    store = FeatureStore(["a", "b"], np.eye(2, dtype=np.float32))
    assert "a" in store and "z" not in store
    assert len(store) == 2
    assert store.get("b").dtype == np.float32
    assert store.matrix(["b", "a"]).dtype == np.float64
    assert np.array_equal(store.matrix(["b", "a"]), np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(KeyError, match="not in feature store"):
        store.get("z")
    with pytest.raises(ValueError, match="duplicate"):
        FeatureStore(["a", "a"], np.eye(2, dtype=np.float32))


def test_synth_corpus_is_deterministic(tmp_path):
    cfg = SynthConfig(dim=8, subjects_per_race=5, images_per_subject=3, seed=42)
    rec_a, store_a = synth_corpus(cfg)
    rec_b, store_b = synth_corpus(cfg)
    assert rec_a == rec_b
    assert store_a.ids == store_b.ids
    assert np.array_equal(store_a.matrix(store_a.ids), store_b.matrix(store_b.ids))


def test_synth_splits_share_race_geometry():
    train_cfg = SynthConfig(dim=12, subjects_per_race=40, images_per_subject=2, seed=1)
    test_cfg = SynthConfig(
        dim=12, subjects_per_race=40, images_per_subject=2, seed=1, split="test"
    )
    rec_tr, st_tr = synth_corpus(train_cfg)
    rec_te, st_te = synth_corpus(test_cfg)
    assert not ({r.image_id for r in rec_tr} & {r.image_id for r in rec_te})
    assert not ({r.subject_id for r in rec_tr} & {r.subject_id for r in rec_te})

    def race_mean(records, store, race):
        ids = [r.image_id for r in records if r.race == race]
        return store.matrix(ids).mean(axis=0)

    for race in RACES:
        same = np.linalg.norm(race_mean(rec_tr, st_tr, race) - race_mean(rec_te, st_te, race))
        for other in RACES:
            if other == race:
                continue
            cross = np.linalg.norm(
                race_mean(rec_tr, st_tr, race) - race_mean(rec_te, st_te, other)
            )
            assert same < cross


def test_synth_within_subject_spread_tracks_sigma():
    cfg = SynthConfig(dim=8, subjects_per_race=6, images_per_subject=4, sigma_within=1e-4)
    records, store = synth_corpus(cfg)
    by_subject: dict[str, list[str]] = {}
    for r in records:
        by_subject.setdefault(r.subject_id, []).append(r.image_id)
    for ids in by_subject.values():
        block = store.matrix(ids)
        assert np.ptp(block, axis=0).max() < 1e-2


def test_synth_race_spread_scales_one_race():
    base = SynthConfig(dim=8, subjects_per_race=8, images_per_subject=6, seed=7)
    wide = SynthConfig(
        dim=8, subjects_per_race=8, images_per_subject=6, seed=7,
        race_spread={Race.INDIAN: 5.0},
    )

    def within_var(cfg, race):
        records, store = synth_corpus(cfg)
        by_subject: dict[str, list[str]] = {}
        for r in records:
            if r.race == race:
                by_subject.setdefault(r.subject_id, []).append(r.image_id)
        return float(
            np.mean([store.matrix(ids).var(axis=0).mean() for ids in by_subject.values()])
        )

    assert within_var(wide, Race.INDIAN) > 10 * within_var(base, Race.INDIAN)
    assert within_var(wide, Race.ASIAN) == pytest.approx(within_var(base, Race.ASIAN))


def test_synth_unit_interval_and_boxes():
    cfg = SynthConfig(dim=16, subjects_per_race=4, images_per_subject=2, unit_interval=True)
    records, store = synth_corpus(cfg)
    values = store.matrix(store.ids)
    assert values.min() > 0.0 and values.max() < 1.0
    for rec in records:
        assert rec.size == (4, 4)  # perfect-square dim doubles as a pixel grid
        assert rec.box is not None


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(dim=1)
    with pytest.raises(ValueError):
        SynthConfig(sigma_within=0.0)
    with pytest.raises(ValueError):
        SynthConfig(subjects_per_race=0)
