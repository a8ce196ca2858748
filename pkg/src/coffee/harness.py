"""Three-axis sweep orchestration: sources x sequence lengths x enrichment.

Each config point trains one model; its eval-NE snapshots become a
scaling curve of NE gain (versus the per-sweep ad-only baseline's final
NE) over samples consumed.  Per-point results are cached by a digest of
the full configuration, so re-running a sweep is incremental and a cache
hit reproduces the original output bit for bit.

Reference magnitudes from large-scale production reports are attached to
the ROI/enrichment/headline reports as display-only annotations; nothing
here asserts them.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .configio import canonical_digest, canonical_json
from .errors import ComparabilityError, ConfigError, InsufficientDataError
from .events import SOURCE_ORDER, SourceType
from .metrics import (
    RoiRow,
    ScalingCurve,
    best_fit_slope,
    curve_auc,
    ne_gain,
    write_curves_csv,
    write_roi_csv,
)
from .model import ModelConfig
from .trainer import Snapshot, TrainConfig, train
from .world import (
    World,
    WorldConfig,
    generate_requests,
    generate_world,
    simulate_events,
    simulate_labels,
)

# Display-only reference values from large-scale production reports.
REFERENCE_ROI = {
    "video_view": (0.155, 1.82),
    "organic_impression": (0.235, 2.37),
    "ad_impression": (0.486, 4.69),
    "ad_impression_enriched": (0.758, 7.12),
}
REFERENCE_ENRICHMENT_AUC_RATIO = 1.56
REFERENCE_ENRICHMENT_SLOPE_RATIO = 1.52
REFERENCE_BASELINE_CTR_AUC = 0.6721
REFERENCE_BEST_CTR_AUC = 0.6759

CACHE_VERSION = "v1"


@dataclass(frozen=True)
class SweepConfig:
    world: WorldConfig
    train: TrainConfig
    source_subsets: tuple[tuple[SourceType, ...], ...]
    lengths: tuple[int, ...]
    enrichment: tuple[bool, ...] = (False,)
    enrich_sources: tuple[SourceType, ...] = (SourceType.AD_IMPRESSION,)
    seeds: tuple[int, ...] = (42,)
    baseline_length: int = 200

    def __post_init__(self) -> None:
        if not self.source_subsets or not self.lengths or not self.seeds:
            raise ConfigError("sweep axes must be non-empty")
        if any(l < 1 for l in self.lengths):
            raise ConfigError("lengths must be positive")
        if list(self.lengths) != sorted(self.lengths):
            raise ConfigError("lengths must be ascending")

    def points(self) -> list["PointSpec"]:
        out = []
        for seed in self.seeds:
            for subset in self.source_subsets:
                for length in self.lengths:
                    for enriched in self.enrichment:
                        if enriched and not set(subset) <= set(self.enrich_sources):
                            continue
                        out.append(
                            PointSpec(
                                sources=tuple(
                                    s for s in SOURCE_ORDER if s in subset
                                ),
                                length=length,
                                enrichment=enriched,
                                seed=seed,
                            )
                        )
        return out


@dataclass(frozen=True)
class PointSpec:
    sources: tuple[SourceType, ...]
    length: int
    enrichment: bool
    seed: int

    @property
    def label(self) -> str:
        if not self.sources:
            return "baseline"
        return "+".join(s.value for s in self.sources)

    def to_dict(self) -> dict:
        return {
            "sources": [s.value for s in self.sources],
            "length": self.length,
            "enrichment": self.enrichment,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class RunSummary:
    """Cacheable outcome of one training run."""

    spec: PointSpec
    digest: str
    eval_digest: str
    snapshots: tuple[Snapshot, ...]
    wall_time_s: float

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]

    def to_json(self) -> dict:
        return {
            "cache_version": CACHE_VERSION,
            "spec": self.spec.to_dict(),
            "digest": self.digest,
            "eval_digest": self.eval_digest,
            "snapshots": [dataclasses.asdict(s) for s in self.snapshots],
            "wall_time_s": self.wall_time_s,
        }

    @staticmethod
    def from_json(data: dict) -> "RunSummary":
        spec = data["spec"]
        return RunSummary(
            spec=PointSpec(
                sources=tuple(SourceType(s) for s in spec["sources"]),
                length=spec["length"],
                enrichment=spec["enrichment"],
                seed=spec["seed"],
            ),
            digest=data["digest"],
            eval_digest=data["eval_digest"],
            snapshots=tuple(Snapshot(**s) for s in data["snapshots"]),
            wall_time_s=data["wall_time_s"],
        )


@dataclass(frozen=True)
class SweepPoint:
    spec: PointSpec
    summary: RunSummary
    curve: ScalingCurve
    roi: RoiRow


@dataclass
class SweepResult:
    config: SweepConfig
    baselines: dict[int, RunSummary]     # per replicate seed
    points: list[SweepPoint]
    failures: list[tuple[PointSpec, str]]

    def find(
        self,
        source: SourceType | None,
        length: int | None = None,
        enrichment: bool | None = None,
        seed: int | None = None,
    ) -> list[SweepPoint]:
        out = []
        for p in self.points:
            if source is not None and p.spec.sources != (source,):
                continue
            if length is not None and p.spec.length != length:
                continue
            if enrichment is not None and p.spec.enrichment != enrichment:
                continue
            if seed is not None and p.spec.seed != seed:
                continue
            out.append(p)
        return out


def _model_for(sweep: SweepConfig, world: World, spec: PointSpec) -> ModelConfig:
    length = spec.length if spec.sources else sweep.baseline_length
    return ModelConfig(
        catalog=world.catalog_sizes(),
        sources=spec.sources,
        max_len=length,
        enrichment=spec.enrichment,
    )


def _point_digest(sweep: SweepConfig, spec: PointSpec) -> str:
    return canonical_digest(
        {
            "cache_version": CACHE_VERSION,
            "world": dataclasses.asdict(sweep.world),
            "train": sweep.train.to_dict(),
            "point": spec.to_dict(),
        }
    )


class _SweepData:
    """World/events/examples, generated lazily once per replicate seed."""

    def __init__(self, sweep: SweepConfig):
        self.sweep = sweep
        self._cache: dict[int, tuple] = {}

    def for_seed(self, seed: int):
        if seed not in self._cache:
            world = generate_world(self.sweep.world, seed=seed)
            events = simulate_events(world)
            requests = generate_requests(world)
            examples = simulate_labels(world, requests, events)
            self._cache[seed] = (world, events, examples)
        return self._cache[seed]


def _run_point(
    sweep: SweepConfig,
    spec: PointSpec,
    data: _SweepData,
    cache_dir: Path | None,
    progress: Callable[[dict], None] | None,
) -> RunSummary:
    digest = _point_digest(sweep, spec)
    cache_path = (
        cache_dir / f"run-{digest}.json" if cache_dir is not None else None
    )
    if cache_path is not None and cache_path.exists():
        with open(cache_path, "r", encoding="utf-8") as fh:
            summary = RunSummary.from_json(json.load(fh))
        if progress is not None:
            progress({"point": spec.to_dict(), "cached": True})
        return summary
    world, events, examples = data.for_seed(spec.seed)
    train_config = dataclasses.replace(sweep.train, seed=spec.seed)
    model_config = _model_for(sweep, world, spec)
    _, record = train(world, events, examples, model_config, train_config)
    summary = RunSummary(
        spec=spec,
        digest=digest,
        eval_digest=record.eval_digest,
        snapshots=record.snapshots,
        wall_time_s=record.wall_time_s,
    )
    if cache_path is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        tmp = cache_path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(summary.to_json(), fh, sort_keys=True)
        os.replace(tmp, cache_path)
    if progress is not None:
        progress(
            {
                "point": spec.to_dict(),
                "cached": False,
                "final_ne": summary.final.ne,
                "final_auc": summary.final.auc,
            }
        )
    return summary


def curve_from_snapshots(
    snapshots: tuple[Snapshot, ...],
    baseline_ne: float,
    source_label: str,
    enrichment: bool,
) -> ScalingCurve:
    """NE gain versus samples consumed, against the baseline's final NE."""
    return ScalingCurve(
        capacities=tuple(float(s.samples) for s in snapshots),
        gains=tuple(ne_gain(baseline_ne, s.ne) for s in snapshots),
        source=source_label,
        enrichment=enrichment,
        nes=tuple(s.ne for s in snapshots),
    )


def run_sweep(
    sweep: SweepConfig,
    cache_dir=None,
    workers: int = 1,
    progress: Callable[[dict], None] | None = None,
) -> SweepResult:
    """Train every config point (plus one shared baseline per seed) and
    derive curves and ROI rows.  Child-run failures are recorded and the
    sweep continues."""
    cache_dir = Path(cache_dir) if cache_dir is not None else None
    data = _SweepData(sweep)
    baselines: dict[int, RunSummary] = {}
    for seed in sweep.seeds:
        spec = PointSpec(sources=(), length=0, enrichment=False, seed=seed)
        baselines[seed] = _run_point(sweep, spec, data, cache_dir, progress)

    specs = sweep.points()
    summaries: dict[PointSpec, RunSummary] = {}
    failures: list[tuple[PointSpec, str]] = []

    def execute(spec: PointSpec):
        try:
            return spec, _run_point(sweep, spec, data, cache_dir, progress), None
        except Exception as exc:  # noqa: BLE001 - sweep must continue
            return spec, None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(execute, specs))
    else:
        outcomes = [execute(s) for s in specs]

    points: list[SweepPoint] = []
    for spec, summary, error in outcomes:
        if error is not None:
            failures.append((spec, error))
            continue
        summaries[spec] = summary
        baseline_ne = baselines[spec.seed].final.ne
        curve = curve_from_snapshots(
            summary.snapshots, baseline_ne, spec.label, spec.enrichment
        )
        roi = RoiRow(
            source=spec.label,
            enrichment=spec.enrichment,
            max_len=spec.length,
            curve_auc=curve_auc(curve),
            slope=best_fit_slope(curve),
        )
        points.append(SweepPoint(spec=spec, summary=summary, curve=curve, roi=roi))
    return SweepResult(
        config=sweep, baselines=baselines, points=points, failures=failures
    )


# ----------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class EnrichmentRatio:
    source: str
    length: int
    seed: int
    auc_ratio: float
    slope_ratio: float


def compare_enrichment(result: SweepResult) -> dict:
    """Enriched/unenriched AUC and slope ratios for every matched pair.

    Production-scale reference ratios are attached for display only.
    """
    ratios: list[EnrichmentRatio] = []
    for p in result.points:
        if not p.spec.enrichment:
            continue
        twins = [
            q
            for q in result.points
            if not q.spec.enrichment
            and q.spec.sources == p.spec.sources
            and q.spec.length == p.spec.length
            and q.spec.seed == p.spec.seed
        ]
        if not twins:
            raise ComparabilityError(
                f"no unenriched counterpart for {p.spec.label} @ {p.spec.length}"
            )
        twin = twins[0]
        ratios.append(
            EnrichmentRatio(
                source=p.spec.label,
                length=p.spec.length,
                seed=p.spec.seed,
                auc_ratio=p.roi.curve_auc / twin.roi.curve_auc,
                slope_ratio=p.roi.slope / twin.roi.slope,
            )
        )
    if not ratios:
        raise ComparabilityError("sweep contains no enriched points")
    return {
        "ratios": [dataclasses.asdict(r) for r in ratios],
        "reference": {
            "auc_ratio": REFERENCE_ENRICHMENT_AUC_RATIO,
            "slope_ratio": REFERENCE_ENRICHMENT_SLOPE_RATIO,
        },
    }


@dataclass(frozen=True)
class SaturationRow:
    source: str
    enrichment: bool
    seed: int
    lengths: tuple[int, ...]
    gains: tuple[float, ...]           # final NE gain per length
    marginal_gains: tuple[float, ...]  # per consecutive length step
    saturating: bool                   # marginal gains strictly decreasing


def saturation_report(result: SweepResult) -> list[SaturationRow]:
    """Marginal NE gain per length doubling for every (source, enrichment,
    seed) family with at least three lengths."""
    families: dict[tuple, list[SweepPoint]] = {}
    for p in result.points:
        if not p.spec.sources:
            continue
        key = (p.spec.label, p.spec.enrichment, p.spec.seed)
        families.setdefault(key, []).append(p)
    rows = []
    for (label, enriched, seed), members in sorted(families.items()):
        members.sort(key=lambda p: p.spec.length)
        if len(members) < 3:
            continue
        lengths = tuple(p.spec.length for p in members)
        gains = tuple(p.curve.gains[-1] for p in members)
        marginal = tuple(b - a for a, b in zip(gains, gains[1:]))
        saturating = all(b < a for a, b in zip(marginal, marginal[1:]))
        rows.append(
            SaturationRow(
                source=label,
                enrichment=enriched,
                seed=seed,
                lengths=lengths,
                gains=gains,
                marginal_gains=marginal,
                saturating=saturating,
            )
        )
    if not rows:
        raise InsufficientDataError(
            "saturation report needs >= 3 lengths for some source"
        )
    return rows


def ctr_headline(baseline: RunSummary, best: RunSummary) -> dict:
    """Absolute and relative ROC-AUC delta of the best run over the
    baseline, on the shared eval set; reference values attached."""
    if baseline.eval_digest != best.eval_digest:
        raise ComparabilityError(
            "baseline and best run were evaluated on different eval sets"
        )
    base_auc = baseline.final.auc
    best_auc = best.final.auc
    return {
        "baseline": {"point": baseline.spec.to_dict(), "auc": base_auc},
        "best": {"point": best.spec.to_dict(), "auc": best_auc},
        "abs_delta": best_auc - base_auc,
        "rel_delta_pct": (best_auc / base_auc - 1.0) * 100.0,
        "reference": {
            "baseline_auc": REFERENCE_BASELINE_CTR_AUC,
            "best_auc": REFERENCE_BEST_CTR_AUC,
            "rel_delta_pct": (
                REFERENCE_BEST_CTR_AUC / REFERENCE_BASELINE_CTR_AUC - 1.0
            )
            * 100.0,
        },
    }


def pick_best_point(result: SweepResult, seed: int) -> SweepPoint:
    """The enriched ad-impression point with the best final AUC; falls
    back to the best point overall when nothing is enriched."""
    enriched_ad = [
        p
        for p in result.points
        if p.spec.seed == seed
        and p.spec.enrichment
        and p.spec.sources == (SourceType.AD_IMPRESSION,)
    ]
    pool = enriched_ad or [p for p in result.points if p.spec.seed == seed]
    if not pool:
        raise InsufficientDataError("sweep produced no points to compare")
    return max(pool, key=lambda p: p.summary.final.auc)


def write_sweep_outputs(result: SweepResult, out_dir) -> dict[str, Path]:
    """curves.csv, roi.csv, saturation.csv and headline.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    curves = [(p.curve, p.spec.length) for p in result.points]
    paths["curves"] = out / "curves.csv"
    write_curves_csv(curves, paths["curves"])

    paths["roi"] = out / "roi.csv"
    write_roi_csv([p.roi for p in result.points], paths["roi"])

    paths["saturation"] = out / "saturation.csv"
    try:
        rows = saturation_report(result)
    except InsufficientDataError:
        rows = []
    with open(paths["saturation"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("source,enrichment,seed,length,gain,marginal_gain,saturating\n")
        for row in rows:
            for i, length in enumerate(row.lengths):
                marginal = "" if i == 0 else repr(row.marginal_gains[i - 1])
                fh.write(
                    f"{row.source},{int(row.enrichment)},{row.seed},{length},"
                    f"{row.gains[i]!r},{marginal},{int(row.saturating)}\n"
                )

    seed = result.config.seeds[0]
    headline: dict = {"failures": [f"{s.label}@{s.length}: {e}" for s, e in result.failures]}
    try:
        best = pick_best_point(result, seed)
        headline.update(ctr_headline(result.baselines[seed], best.summary))
    except (InsufficientDataError, ComparabilityError) as exc:
        headline["error"] = str(exc)
    try:
        headline["enrichment"] = compare_enrichment(result)
    except ComparabilityError:
        pass
    paths["headline"] = out / "headline.json"
    with open(paths["headline"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json(headline))
        fh.write("\n")
    return paths
