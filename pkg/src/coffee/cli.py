"""Command-line entry point.

Subcommands mirror the modules: gen-world, simulate, train, eval, sweep,
enrich, explain, report.  Every command takes --seed and --out; nothing
is overwritten without --force.  Exit codes: 0 success, 1 usage error,
2 data/config error, 3 internal failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import configio, enrichment, figures, harness
from .errors import CoffeeError, ConfigError
from .events import (
    SOURCE_ORDER,
    EventLog,
    SourceType,
    read_event_log,
    write_event_log,
)
from .explain import explain
from .model import ModelConfig
from .numeric import load_checkpoint, save_checkpoint
from .trainer import TrainConfig, evaluate, progress_printer, train
from .world import (
    ExampleSet,
    WorldConfig,
    generate_requests,
    generate_world,
    load_world,
    save_world,
    simulate_events,
    simulate_labels,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise UsageError(message)


def _prepare_out(args) -> Path:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(
            f"output directory {out} is not empty; pass --force to overwrite"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def _world_config(path: str | None, seed: int | None) -> WorldConfig:
    kv = configio.read_kv(path) if path else {}
    if seed is not None:
        kv["seed"] = seed
    return configio.build_dataclass(WorldConfig, kv)


def _load_examples(path: str) -> ExampleSet:
    examples = ExampleSet.from_jsonl(path)
    if examples.label is None:
        raise ConfigError(f"{path} has no labels; run `coffee simulate` first")
    return examples


def _model_config_from_kv(kv: dict, world) -> ModelConfig:
    model_kv = configio.split_prefix(kv, "model")
    max_len = model_kv.pop("max_len", 200)
    per_source = {}
    for source in SOURCE_ORDER:
        key = f"max_len.{source.value}"
        if key in model_kv:
            per_source[source] = int(model_kv.pop(key))
    if isinstance(max_len, int):
        lens = {s: max_len for s in SOURCE_ORDER}
    else:
        raise ConfigError("model.max_len must be an integer")
    lens.update(per_source)
    sources = model_kv.pop("sources", [s.value for s in SOURCE_ORDER])
    if isinstance(sources, str):
        sources = [sources] if sources else []
    if isinstance(sources, bool):
        sources = []
    try:
        source_tuple = tuple(SourceType(s) for s in sources)
    except ValueError as exc:
        raise ConfigError(f"unknown source in model.sources: {exc}") from exc
    hidden = model_kv.pop("mlp_hidden", [32, 16])
    if isinstance(hidden, int):
        hidden = [hidden]
    return ModelConfig(
        catalog=world.catalog_sizes(),
        sources=source_tuple,
        max_len=lens,
        mlp_hidden=tuple(hidden),
        **{
            k: model_kv[k]
            for k in ("d_attr", "d_event", "d_time", "d_key", "enrichment",
                      "window_days")
            if k in model_kv
        },
    )


def _train_config_from_kv(kv: dict, seed: int | None) -> TrainConfig:
    train_kv = configio.split_prefix(kv, "train")
    if seed is not None:
        train_kv["seed"] = seed
    if "max_steps" in train_kv and train_kv["max_steps"] in ("none", ""):
        train_kv["max_steps"] = None
    return configio.build_dataclass(TrainConfig, train_kv)


def _write_model_sidecar(config: ModelConfig, path) -> None:
    flat: dict = {}
    data = config.to_dict()
    flat["sources"] = data["sources"]
    for s, r in sorted(data["max_len"].items()):
        flat[f"max_len.{s}"] = r
    for key in ("d_attr", "d_event", "d_time", "d_key", "enrichment",
                "window_days"):
        flat[key] = data[key]
    flat["mlp_hidden"] = data["mlp_hidden"]
    for key, value in sorted(data["catalog"].items()):
        flat[f"catalog.{key}"] = value
    configio.write_kv(path, flat)


def _read_model_sidecar(path) -> ModelConfig:
    kv = configio.read_kv(path)
    catalog_kv = configio.split_prefix(kv, "catalog")
    from .events import CatalogSizes

    sources = kv.get("sources", [])
    if isinstance(sources, str):
        sources = [sources]
    if isinstance(sources, bool):
        sources = []
    max_len = {
        SourceType(k.split(".", 1)[1]): v
        for k, v in kv.items()
        if k.startswith("max_len.")
    }
    hidden = kv.get("mlp_hidden", [32, 16])
    if isinstance(hidden, int):
        hidden = [hidden]
    return ModelConfig(
        catalog=configio.build_dataclass(CatalogSizes, catalog_kv),
        sources=tuple(SourceType(s) for s in sources),
        max_len=max_len,
        d_attr=kv["d_attr"],
        d_event=kv["d_event"],
        d_time=kv["d_time"],
        d_key=kv["d_key"],
        mlp_hidden=tuple(hidden),
        enrichment=bool(kv["enrichment"]),
        window_days=float(kv["window_days"]),
    )


def _write_run_csv(record, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "samples", "ne", "auc"])
        for s in record.snapshots:
            writer.writerow([s.step, s.samples, repr(s.ne), repr(s.auc)])


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------


def _cmd_gen_world(args) -> int:
    out = _prepare_out(args)
    config = _world_config(args.config, args.seed)
    world = generate_world(config)
    save_world(world, out / "world.jsonl")
    print(f"wrote {out / 'world.jsonl'} ({world.n_users} users)")
    return 0


def _cmd_simulate(args) -> int:
    out = _prepare_out(args)
    world = load_world(args.world)
    events = simulate_events(world, horizon_days=args.horizon_days, seed=args.seed)
    write_event_log(events.iter_events(), out / "events.jsonl")
    requests = generate_requests(world)
    examples = simulate_labels(world, requests, events)
    examples.to_jsonl(out / "examples.jsonl")
    print(
        f"wrote {len(events)} events and {len(examples)} labeled examples to {out}"
    )
    return 0


def _load_event_log(path, n_users: int) -> EventLog:
    return EventLog.from_events(read_event_log(path), n_users)


def _cmd_train(args) -> int:
    out = _prepare_out(args)
    world = load_world(args.world)
    events = _load_event_log(args.events, world.n_users)
    examples = _load_examples(args.examples)
    kv = configio.read_kv(args.config) if args.config else {}
    model_config = _model_config_from_kv(kv, world)
    train_config = _train_config_from_kv(kv, args.seed)
    params, record = train(
        world, events, examples, model_config, train_config,
        progress=progress_printer(),
    )
    save_checkpoint(params, out / "model.ckpt")
    _write_model_sidecar(model_config, out / "model.cfg")
    _write_run_csv(record, out / "run.csv")
    print(f"final eval ne={record.final.ne!r} auc={record.final.auc!r}")
    return 0


def _cmd_eval(args) -> int:
    out = _prepare_out(args)
    world = load_world(args.world)
    events = _load_event_log(args.events, world.n_users)
    examples = _load_examples(args.examples)
    model_config = _read_model_sidecar(args.model_config)
    params = load_checkpoint(args.model)
    ne, auc = evaluate(params, model_config, world, events, examples)
    payload = {"ne": ne, "auc": auc, "examples": len(examples)}
    with open(out / "eval.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(configio.canonical_json(payload))
        fh.write("\n")
    print(configio.canonical_json(payload))
    return 0


def _cmd_enrich(args) -> int:
    out = _prepare_out(args)
    world = load_world(args.world)
    log = read_event_log(args.events)
    ad_index = enrichment.KnnIndex(
        ids=np.arange(world.config.ads), embeddings=world.ad_embedding
    )
    content_index = enrichment.KnnIndex(
        ids=np.arange(world.config.contents), embeddings=world.content_embedding
    )
    k = args.k if args.k is not None else world.config.knn_k
    enriched = []
    for event in log:
        index = (
            ad_index
            if event.source is SourceType.AD_IMPRESSION
            else content_index
        )
        enriched.append(
            enrichment.enrich_event(event, index, world.codebook, k=k)
        )
    write_event_log(enriched, out / "events_enriched.jsonl")
    print(f"enriched {len(enriched)} events -> {out / 'events_enriched.jsonl'}")
    return 0


def _sweep_config_from_manifest(path, seed: int | None) -> harness.SweepConfig:
    kv = configio.read_kv(path)
    world = configio.build_dataclass(
        WorldConfig, configio.split_prefix(kv, "world")
    )
    train_config = configio.build_dataclass(
        TrainConfig, configio.split_prefix(kv, "train")
    )
    raw_sources = kv.get("sources", [s.value for s in SOURCE_ORDER])
    if isinstance(raw_sources, str):
        raw_sources = [raw_sources]
    subsets = []
    for token in raw_sources:
        subsets.append(tuple(SourceType(part) for part in str(token).split("+")))
    lengths = kv.get("lengths", [50, 100, 200, 400])
    if isinstance(lengths, int):
        lengths = [lengths]
    enr = kv.get("enrichment", False)
    if isinstance(enr, bool):
        enr = [enr]
    enrich_sources = kv.get("enrich_sources", [SourceType.AD_IMPRESSION.value])
    if isinstance(enrich_sources, str):
        enrich_sources = [enrich_sources]
    seeds = kv.get("seeds", [world.seed])
    if isinstance(seeds, int):
        seeds = [seeds]
    if seed is not None:
        seeds = [seed]
    return harness.SweepConfig(
        world=world,
        train=train_config,
        source_subsets=tuple(subsets),
        lengths=tuple(int(l) for l in lengths),
        enrichment=tuple(bool(e) for e in enr),
        enrich_sources=tuple(SourceType(s) for s in enrich_sources),
        seeds=tuple(int(s) for s in seeds),
        baseline_length=int(kv.get("baseline_length", 200)),
    )


def _cmd_sweep(args) -> int:
    out = _prepare_out(args)
    sweep = _sweep_config_from_manifest(args.manifest, args.seed)
    cache_dir = Path(args.cache_dir) if args.cache_dir else out / "cache"
    result = harness.run_sweep(
        sweep,
        cache_dir=cache_dir,
        workers=args.workers,
        progress=progress_printer(),
    )
    paths = harness.write_sweep_outputs(result, out)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    if result.failures:
        print(f"{len(result.failures)} point(s) failed; see headline.json")
    return 0


def _cmd_explain(args) -> int:
    out = _prepare_out(args)
    world = load_world(args.world)
    events = _load_event_log(args.events, world.n_users)
    model_config = _read_model_sidecar(args.model_config)
    params = load_checkpoint(args.model)
    report = explain(
        params,
        model_config,
        world,
        events,
        user_id=args.user,
        ad_id=args.ad,
        request_ts=args.ts,
        top_m=args.top_m,
    )
    (out / "explain.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "explain.txt").write_text(report.to_text() + "\n", encoding="utf-8")
    print(report.to_text())
    return 0


def _read_curves_csv(path) -> list[figures.CurveSeries]:
    rows: dict[tuple, list[tuple[float, float]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (row["source"], row["enrichment"] == "1", int(row["max_len"]))
            rows.setdefault(key, []).append(
                (float(row["capacity_norm"]), float(row["ne_gain"]))
            )
    return [
        figures.CurveSeries(
            label=label,
            enrichment=enr,
            max_len=max_len,
            x=tuple(x for x, _ in points),
            y=tuple(y for _, y in points),
        )
        for (label, enr, max_len), points in rows.items()
    ]


def _read_roi_csv(path) -> list[figures.RoiBar]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(
                figures.RoiBar(
                    label=row["source"],
                    enrichment=row["enrichment"] == "1",
                    max_len=int(row["max_len"]),
                    curve_auc=float(row["curve_auc"]),
                )
            )
    return out


def _read_saturation_csv(path) -> list[figures.SaturationSeries]:
    rows: dict[tuple, list[tuple[int, float, bool]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (row["source"], row["enrichment"] == "1", int(row["seed"]))
            rows.setdefault(key, []).append(
                (int(row["length"]), float(row["gain"]), row["saturating"] == "1")
            )
    out = []
    for (label, enr, _seed), points in rows.items():
        points.sort()
        out.append(
            figures.SaturationSeries(
                label=label,
                enrichment=enr,
                lengths=tuple(p[0] for p in points),
                gains=tuple(p[1] for p in points),
                saturating=points[0][2],
            )
        )
    return out


def _report_text(runs: Path) -> str:
    lines = ["run report", "=" * 60]
    headline_path = runs / "headline.json"
    if headline_path.exists():
        headline = json.loads(headline_path.read_text(encoding="utf-8"))
        if "abs_delta" in headline:
            ref = headline["reference"]
            lines.append("headline CTR comparison (shared eval set)")
            lines.append(
                f"  baseline auc {headline['baseline']['auc']:.4f}  "
                f"best auc {headline['best']['auc']:.4f}  "
                f"delta {headline['abs_delta']:+.4f} "
                f"({headline['rel_delta_pct']:+.3f}%)"
            )
            lines.append(
                f"  production-scale reference: {ref['baseline_auc']:.4f} -> "
                f"{ref['best_auc']:.4f} ({ref['rel_delta_pct']:+.3f}%), "
                "display only"
            )
        enr = headline.get("enrichment")
        if enr:
            lines.append("enrichment ratios (enriched / unenriched)")
            for r in enr["ratios"]:
                lines.append(
                    f"  {r['source']} @ r={r['length']}: "
                    f"auc x{r['auc_ratio']:.2f}, slope x{r['slope_ratio']:.2f}"
                )
            lines.append(
                f"  production-scale reference: auc x"
                f"{enr['reference']['auc_ratio']:.2f}, slope x"
                f"{enr['reference']['slope_ratio']:.2f}, display only"
            )
    roi_path = runs / "roi.csv"
    if roi_path.exists():
        lines.append("per-source ROI (this sweep / large-scale reference)")
        lines.append(f"  {'source':<28}{'r':>6}{'auc':>10}{'slope':>10}{'ref':>16}")
        with open(roi_path, "r", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                label = row["source"] + ("+enr" if row["enrichment"] == "1" else "")
                ref_key = (
                    row["source"] + "_enriched"
                    if row["enrichment"] == "1"
                    else row["source"]
                )
                ref = harness.REFERENCE_ROI.get(ref_key)
                ref_text = f"{ref[0]:.3f}/{ref[1]:.2f}" if ref else "-"
                lines.append(
                    f"  {label:<28}{row['max_len']:>6}"
                    f"{float(row['curve_auc']):>10.4f}"
                    f"{float(row['slope']):>10.4f}{ref_text:>16}"
                )
    return "\n".join(lines) + "\n"


def _cmd_report(args) -> int:
    out = _prepare_out(args)
    runs = Path(args.runs)
    fig_dir = out / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    curves_csv = runs / "curves.csv"
    if not curves_csv.exists():
        raise ConfigError(f"{runs} does not look like a sweep output (no curves.csv)")
    series = _read_curves_csv(curves_csv)
    figures.render_scaling_curves(series, fig_dir / "scaling_curves.png")
    bars = _read_roi_csv(runs / "roi.csv")
    lengths = [b.max_len for b in bars if b.max_len > 0]
    anchor = (
        args.anchor_length
        if args.anchor_length is not None
        else (max(set(lengths), key=lengths.count) if lengths else 0)
    )
    figures.render_roi_bars(bars, fig_dir / "roi.png", anchor_length=anchor)
    sat_path = runs / "saturation.csv"
    sat_series = _read_saturation_csv(sat_path) if sat_path.exists() else []
    if sat_series:
        figures.render_saturation(sat_series, fig_dir / "saturation.png")
    (out / "report.txt").write_text(_report_text(runs), encoding="utf-8")
    print((out / "report.txt").read_text(encoding="utf-8"))
    return 0


# ----------------------------------------------------------------------
# Parser wiring
# ----------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="coffee", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: _Parser) -> None:
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument(
            "--force", action="store_true", help="overwrite a non-empty --out"
        )

    p = sub.add_parser("gen-world", help="generate a synthetic world")
    common(p)
    p.add_argument("--config", help="world config file (key = value)")
    p.set_defaults(func=_cmd_gen_world)

    p = sub.add_parser("simulate", help="simulate events and labeled examples")
    common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--horizon-days", type=float, default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="train the sequence model")
    common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--config", help="train.*/model.* config file")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--model", required=True, help="model.ckpt path")
    p.add_argument("--model-config", required=True, help="model.cfg sidecar")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("enrich", help="append k-NN embedding attributes")
    common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--k", type=int, default=None)
    p.set_defaults(func=_cmd_enrich)

    p = sub.add_parser("sweep", help="run a sources x lengths x enrichment sweep")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--cache-dir", default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("explain", help="attention attribution for one pair")
    common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--model-config", required=True)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--ad", type=int, required=True)
    p.add_argument("--ts", type=int, required=True)
    p.add_argument("--top-m", type=int, default=5)
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("report", help="render figures and text from sweep outputs")
    common(p)
    p.add_argument("--runs", required=True, help="sweep output directory")
    p.add_argument("--anchor-length", type=int, default=None)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except CoffeeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse --help
        code = exc.code if isinstance(exc.code, int) else 0
        return code
    except Exception:  # noqa: BLE001 - last-resort internal failure
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
