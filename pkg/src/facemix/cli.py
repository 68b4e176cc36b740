"""Command-line front door.

One subcommand per pipeline stage plus one per experiment design. Design
commands read an optional JSON config; any config field can be overridden
with ``--path.to.field value`` flags. Relative output paths are placed under
the directory named by the FACEMIX_OUT environment variable when it is set.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .clusteranalysis import ClusterConfig, cluster_report, write_cluster_csv, write_cluster_json
from .corpus import (
    FeatureStore,
    SynthConfig,
    build_subject_pool,
    read_catalog,
    read_manifest,
    sample_manifest,
    single_race_manifest,
    synth_corpus,
    write_catalog,
    write_manifest,
)
from .distributions import (
    RACES,
    Race,
    RaceMix,
    SubjectCounts,
    enumerate_simplex_points,
    mix_to_counts,
)
from .embednet import TrainConfig, embed_all, head_from_spec, load_model, save_model, train
from .evalproto import REPORT_COLUMNS, evaluate, make_pairs, read_pairs, write_pairs
from .harness import (
    ResultsTable,
    apply_overrides,
    config_from_dict,
    emit_simplex_svg,
    resolve_outdir,
    run_experiment,
    verify_fixtures,
)

__all__ = ["main"]


def _out(path: str) -> Path:
    resolved = resolve_outdir(path)
    resolved.parent.mkdir(parents=True, exist_ok=True)
    return resolved


def _pairs_from_leftovers(leftovers: list[str], parser: argparse.ArgumentParser) -> dict[str, str]:
    """Turn ``--key value`` / ``--key=value`` leftovers into override pairs."""
    overrides: dict[str, str] = {}
    i = 0
    while i < len(leftovers):
        token = leftovers[i]
        if not token.startswith("--"):
            parser.error(f"expected an option, got {token!r}")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            i += 1
            if i >= len(leftovers):
                parser.error(f"option --{key} is missing a value")
            value = leftovers[i]
        if not key:
            parser.error(f"malformed override {token!r}")
        overrides[key] = value
        i += 1
    return overrides


def _design_command(design: str, args: argparse.Namespace, leftovers: list[str],
                    parser: argparse.ArgumentParser) -> int:
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    else:
        data = {}
    data = apply_overrides(data, _pairs_from_leftovers(leftovers, parser))
    data["design"] = design
    cfg = config_from_dict(data)
    table = run_experiment(cfg, max_cells=args.max_cells)
    outdir = resolve_outdir(cfg.outdir)
    print(f"{design}: {len(table.rows)} rows in {outdir / (design + '.csv')}")
    if not table.complete:
        print("run incomplete: cell budget exhausted; rerun to resume", file=sys.stderr)
        return 1
    return 0


def _cmd_enumerate(args: argparse.Namespace) -> int:
    rows = []
    for mix in enumerate_simplex_points():
        counts = mix_to_counts(mix, args.total)
        rows.append(tuple(mix.to_strings()) + tuple(str(c) for c in counts.counts))
    header = tuple(f"weight_{r.label.lower()}" for r in RACES) + REPORT_COLUMNS[:4]
    if args.out:
        with open(_out(args.out), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(rows)
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    cfg = SynthConfig(
        dim=args.dim,
        subjects_per_race=args.subjects_per_race,
        images_per_subject=args.images_per_subject,
        sigma_between=args.sigma_between,
        sigma_within=args.sigma_within,
        seed=args.seed,
        split=args.split,
        unit_interval=args.unit_interval,
    )
    records, store = synth_corpus(cfg)
    outdir = resolve_outdir(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_catalog(records, outdir / "catalog.csv")
    store.save(outdir / "features.f32")
    print(f"{len(records)} images -> {outdir}")
    return 0


def _parse_mix(text: str) -> RaceMix:
    return RaceMix.from_strings([p.strip() for p in text.split(",")])


def _cmd_sample(args: argparse.Namespace) -> int:
    catalog = read_catalog(args.catalog)
    chosen = sum(x is not None for x in (args.mix, args.counts, args.race))
    if chosen != 1:
        raise SystemExit("pass exactly one of --mix, --counts, --race")
    if args.race is not None:
        race = Race.from_label(args.race)
        cap = args.subjects
        pool = build_subject_pool(catalog, cap, args.images_per_subject)
        manifest = single_race_manifest(
            pool, race, args.subjects, seed=args.seed,
            images_per_subject=args.images_per_subject,
        )
    else:
        if args.mix is not None:
            mix = _parse_mix(args.mix)
            counts = mix_to_counts(mix, args.total)
        else:
            mix = None
            counts = SubjectCounts(tuple(int(p) for p in args.counts.split(",")))
        pool = build_subject_pool(catalog, max(counts.counts) or 1, args.images_per_subject)
        manifest = sample_manifest(
            pool, counts, args.images_per_subject, seed=args.seed, mix=mix
        )
    write_manifest(manifest, _out(args.out))
    per_race = manifest.subject_counts()
    summary = ", ".join(f"{r.label}={per_race.get(r, 0)}" for r in RACES)
    print(f"manifest: {summary} -> {args.out}")
    return 0


def _head_spec(text: str):
    try:
        return head_from_spec(json.loads(text))
    except json.JSONDecodeError:
        return head_from_spec(text)


def _cmd_train(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    store = FeatureStore.load(args.features)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        seed=args.seed,
        head=_head_spec(args.head),
    )
    log_path = _out(args.log) if args.log else None
    model = train(manifest, store, cfg, log_path=log_path)
    save_model(model, _out(args.out))
    print(f"model -> {args.out}")
    return 0


def _load_pairs(args: argparse.Namespace) -> "PairSet":
    if args.pairs:
        return read_pairs(args.pairs, args.folds)
    if not args.catalog:
        raise SystemExit("pass --pairs or --catalog to synthesize pairs")
    catalog = read_catalog(args.catalog)
    pairs = make_pairs(catalog, args.pairs_per_race, args.folds, args.seed)
    if args.save_pairs:
        write_pairs(pairs, _out(args.save_pairs))
    return pairs


def _cmd_eval(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    store = FeatureStore.load(args.features)
    pairs = _load_pairs(args)
    report = evaluate(model, store, pairs)
    payload = {
        "per_race": {r.label: report.per_race[r] for r in RACES},
        "mean": report.mean,
        "variance": report.variance,
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        _out(args.out).write_text(text + "\n")
    print(text)
    return 0


def _cmd_cluster(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    store = FeatureStore.load(args.features)
    catalog = read_catalog(args.catalog)
    groups = {}
    for race in RACES:
        ids = [rec.image_id for rec in catalog if rec.race == race]
        if not ids:
            raise SystemExit(f"catalog has no {race.label} images")
        groups[race] = embed_all(model, store, ids)
    cfg = ClusterConfig(k=args.k, samples_per_race=args.samples_per_race, seed=args.seed)
    report = cluster_report(groups, cfg)
    write_cluster_json(report, _out(args.out))
    if args.csv:
        write_cluster_csv(report, _out(args.csv))
    print(f"cluster report -> {args.out}")
    return 0


def _cmd_plot(args: argparse.Namespace) -> int:
    table = ResultsTable.read_csv(args.table)
    metric = None if args.metric == "all" else args.metric
    svg = emit_simplex_svg(table, metric=metric, head=args.head)
    _out(args.out).write_text(svg)
    print(f"plot -> {args.out}")
    return 0


def _cmd_verify_fixtures(args: argparse.Namespace) -> int:
    report = verify_fixtures(args.fixtures, tolerance=args.tolerance)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facemix",
        description="Race-composition experiments for face verification models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for design in ("sweep", "single-race", "growth", "noise"):
        p = sub.add_parser(design, help=f"run the {design} design")
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--max-cells", type=int, default=None,
                       help="stop after this many new cells (resume later)")

    p = sub.add_parser("enumerate", help="list design mixes and subject counts")
    p.add_argument("--total", type=int, default=5000)
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--subjects-per-race", type=int, default=200)
    p.add_argument("--images-per-subject", type=int, default=6)
    p.add_argument("--sigma-between", type=float, default=1.0)
    p.add_argument("--sigma-within", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.add_argument("--unit-interval", action="store_true")

    p = sub.add_parser("sample", help="draw a training manifest from a catalog")
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mix", help="comma-separated weights, e.g. 3/5,2/15,2/15,2/15")
    p.add_argument("--counts", help="comma-separated per-race subject counts")
    p.add_argument("--race", help="single-race manifest for this race label")
    p.add_argument("--subjects", type=int, default=200, help="subjects for --race")
    p.add_argument("--total", type=int, default=200, help="total subjects for --mix")
    p.add_argument("--images-per-subject", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train an embedding model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-step loss CSV")
    p.add_argument("--head", default="arcface", help="head name or JSON spec")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="pair-matching evaluation of a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--pairs", help="pair CSV; omit to synthesize from --catalog")
    p.add_argument("--catalog", help="catalog for pair synthesis")
    p.add_argument("--pairs-per-race", type=int, default=600)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-pairs", help="persist synthesized pairs here")
    p.add_argument("--out", help="write the report JSON here too")

    p = sub.add_parser("cluster", help="embedding-space race cluster analysis")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--samples-per-race", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--csv", help="also write the membership matrix CSV")

    p = sub.add_parser("plot", help="render a sweep CSV onto the simplex net")
    p.add_argument("--table", required=True, help="sweep results CSV")
    p.add_argument("--metric", default="all",
                   choices=["all", "acc_afr", "acc_asi", "acc_cau", "acc_ind",
                            "acc_mean", "acc_var"])
    p.add_argument("--head", default=None, help="head label when the table has several")
    p.add_argument("--out", required=True, help="SVG path")

    p = sub.add_parser("verify-fixtures", help="check reference tables' arithmetic")
    p.add_argument("--fixtures", default=None, help="fixture CSV file or directory")
    p.add_argument("--tolerance", type=float, default=0.015)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args, leftovers = parser.parse_known_args(argv)

    designs = {"sweep", "single-race", "growth", "noise"}
    if args.command in designs:
        return _design_command(args.command, args, leftovers, parser)
    if leftovers:
        parser.error(f"unrecognized arguments: {' '.join(leftovers)}")

    commands = {
        "enumerate": _cmd_enumerate,
        "synth": _cmd_synth,
        "sample": _cmd_sample,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "cluster": _cmd_cluster,
        "plot": _cmd_plot,
        "verify-fixtures": _cmd_verify_fixtures,
    }
    return commands[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
