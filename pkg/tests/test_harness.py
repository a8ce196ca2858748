"""Sweep orchestration: counting, caching, reports, and output files."""

import json

import pytest

from coffee.errors import ComparabilityError
from coffee.events import SourceType
from coffee.harness import (
    PointSpec,
    RunSummary,
    SweepConfig,
    SweepPoint,
    SweepResult,
    compare_enrichment,
    ctr_headline,
    curve_from_snapshots,
    pick_best_point,
    run_sweep,
    saturation_report,
    write_sweep_outputs,
)
from coffee.metrics import RoiRow, best_fit_slope, curve_auc
from coffee.trainer import Snapshot, TrainConfig
from tests.conftest import TINY_CONFIG

TINY_TRAIN = TrainConfig(batch_size=64, epochs=1, seed=11, eval_max=300,
                         snapshots=4)


def tiny_sweep(**overrides):
    kwargs = dict(
        world=TINY_CONFIG,
        train=TINY_TRAIN,
        source_subsets=((SourceType.AD_IMPRESSION,),),
        lengths=(8,),
        enrichment=(False,),
        seeds=(11,),
        baseline_length=8,
    )
    kwargs.update(overrides)
    return SweepConfig(**kwargs)


def fake_summary(spec, nes, eval_digest="d0"):
    snapshots = tuple(
        Snapshot(step=i, samples=i * 100, ne=ne, auc=0.6)
        for i, ne in enumerate(nes)
    )
    return RunSummary(
        spec=spec, digest="x", eval_digest=eval_digest,
        snapshots=snapshots, wall_time_s=0.0,
    )


def fake_point(sources, length, enrichment, nes, baseline_ne=1.0, seed=11):
    spec = PointSpec(sources=sources, length=length, enrichment=enrichment,
                     seed=seed)
    summary = fake_summary(spec, nes)
    curve = curve_from_snapshots(summary.snapshots, baseline_ne, spec.label,
                                 enrichment)
    roi = RoiRow(source=spec.label, enrichment=enrichment, max_len=length,
                 curve_auc=curve_auc(curve), slope=best_fit_slope(curve))
    return SweepPoint(spec=spec, summary=summary, curve=curve, roi=roi)


class TestRunSweep:
    def test_point_counting(self, tmp_path):
        result = run_sweep(tiny_sweep(), cache_dir=tmp_path / "cache")
        assert len(result.points) == 1
        assert set(result.baselines) == {11}
        assert not result.failures

    def test_cache_hit_is_bit_identical(self, tmp_path):
        sweep = tiny_sweep()
        cache = tmp_path / "cache"
        first = run_sweep(sweep, cache_dir=cache)
        events = {"cached": 0}

        def progress(payload):
            events["cached"] += bool(payload.get("cached"))

        second = run_sweep(sweep, cache_dir=cache, progress=progress)
        assert events["cached"] == 2  # baseline + the single point
        assert first.points[0].summary == second.points[0].summary
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        write_sweep_outputs(first, out_a)
        write_sweep_outputs(second, out_b)
        for name in ("curves.csv", "roi.csv", "saturation.csv", "headline.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_enrichment_restricted_to_enrich_sources(self):
        sweep = tiny_sweep(
            source_subsets=(
                (SourceType.AD_IMPRESSION,),
                (SourceType.VIDEO_VIEW,),
            ),
            enrichment=(False, True),
        )
        specs = sweep.points()
        enriched = [s for s in specs if s.enrichment]
        assert all(s.sources == (SourceType.AD_IMPRESSION,) for s in enriched)
        assert len(specs) == 3

    def test_roi_rows_match_their_curves(self, tmp_path):
        result = run_sweep(tiny_sweep(), cache_dir=tmp_path / "cache")
        for p in result.points:
            assert p.roi.curve_auc == curve_auc(p.curve)
            assert p.roi.slope == best_fit_slope(p.curve)

    def test_failures_recorded_not_raised(self, tmp_path):
        # a length of 10^5 violates the model's online cap and must be
        # recorded as a failed point while the sweep continues
        sweep = tiny_sweep(lengths=(8, 100_000))
        result = run_sweep(sweep, cache_dir=tmp_path / "cache")
        assert len(result.points) == 1
        assert len(result.failures) == 1


class TestCompareEnrichment:
    def test_identical_curves_give_unit_ratios(self):
        nes = (1.0, 0.95, 0.9)
        result = SweepResult(
            config=tiny_sweep(enrichment=(False, True)),
            baselines={11: fake_summary(
                PointSpec((), 0, False, 11), (1.0, 1.0, 1.0))},
            points=[
                fake_point((SourceType.AD_IMPRESSION,), 8, False, nes),
                fake_point((SourceType.AD_IMPRESSION,), 8, True, nes),
            ],
            failures=[],
        )
        report = compare_enrichment(result)
        assert report["ratios"][0]["auc_ratio"] == pytest.approx(1.0)
        assert report["ratios"][0]["slope_ratio"] == pytest.approx(1.0)
        assert report["reference"]["auc_ratio"] == pytest.approx(1.56)
        assert report["reference"]["slope_ratio"] == pytest.approx(1.52)

    def test_missing_counterpart_is_an_error(self):
        result = SweepResult(
            config=tiny_sweep(enrichment=(True,)),
            baselines={},
            points=[fake_point((SourceType.AD_IMPRESSION,), 8, True,
                               (1.0, 0.9, 0.8))],
            failures=[],
        )
        with pytest.raises(ComparabilityError):
            compare_enrichment(result)


class TestSaturationReport:
    def test_arithmetic_on_given_gains(self):
        # gains 0.10, 0.14, 0.15, 0.152 over lengths 50..400: marginal
        # gains 0.04, 0.01, 0.002, strictly decreasing -> saturating
        gains = (0.10, 0.14, 0.15, 0.152)
        points = [
            fake_point((SourceType.AD_IMPRESSION,), length, False,
                       (1.0, 1.0 - g))
            for length, g in zip((50, 100, 200, 400), gains)
        ]
        result = SweepResult(config=tiny_sweep(lengths=(50, 100, 200, 400)),
                             baselines={}, points=points, failures=[])
        rows = saturation_report(result)
        assert len(rows) == 1
        row = rows[0]
        assert row.gains == pytest.approx(gains)
        assert row.marginal_gains == pytest.approx((0.04, 0.01, 0.002))
        assert row.saturating

    def test_constant_gains_flagged_non_strictly(self):
        points = [
            fake_point((SourceType.VIDEO_VIEW,), length, False, (1.0, 0.9))
            for length in (50, 100, 200)
        ]
        result = SweepResult(config=tiny_sweep(lengths=(50, 100, 200)),
                             baselines={}, points=points, failures=[])
        row = saturation_report(result)[0]
        assert row.marginal_gains == pytest.approx((0.0, 0.0))
        assert not row.saturating  # zeros are not strictly decreasing


class TestCtrHeadline:
    def test_identical_runs_zero_delta(self):
        spec = PointSpec((SourceType.AD_IMPRESSION,), 8, True, 11)
        a = fake_summary(spec, (1.0, 0.9))
        headline = ctr_headline(a, a)
        assert headline["abs_delta"] == 0.0
        assert headline["rel_delta_pct"] == 0.0

    def test_reference_values_rendered(self):
        spec = PointSpec((SourceType.AD_IMPRESSION,), 8, True, 11)
        headline = ctr_headline(fake_summary(spec, (1.0,)),
                                fake_summary(spec, (1.0,)))
        ref = headline["reference"]
        assert ref["baseline_auc"] == pytest.approx(0.6721)
        assert ref["best_auc"] == pytest.approx(0.6759)
        assert ref["rel_delta_pct"] == pytest.approx(0.565, abs=5e-3)

    def test_eval_set_mismatch_rejected(self):
        spec = PointSpec((SourceType.AD_IMPRESSION,), 8, True, 11)
        a = fake_summary(spec, (1.0, 0.9), eval_digest="aaa")
        b = fake_summary(spec, (1.0, 0.9), eval_digest="bbb")
        with pytest.raises(ComparabilityError):
            ctr_headline(a, b)


class TestOutputs:
    def test_sweep_writes_expected_files(self, tmp_path):
        sweep = tiny_sweep(lengths=(4, 8, 12), enrichment=(False, True))
        result = run_sweep(sweep, cache_dir=tmp_path / "cache")
        paths = write_sweep_outputs(result, tmp_path / "out")
        for name in ("curves", "roi", "saturation", "headline"):
            assert paths[name].exists()
        headline = json.loads(paths["headline"].read_text())
        assert "abs_delta" in headline
        assert headline["reference"]["baseline_auc"] == pytest.approx(0.6721)
        with open(paths["curves"], encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        assert header == [
            "source", "enrichment", "max_len",
            "capacity_raw", "capacity_norm", "ne", "ne_gain",
        ]

    def test_pick_best_prefers_enriched_ad(self):
        good = fake_point((SourceType.AD_IMPRESSION,), 8, True, (1.0, 0.8))
        better_unenriched = fake_point(
            (SourceType.ORGANIC_IMPRESSION,), 8, False, (1.0, 0.5))
        result = SweepResult(config=tiny_sweep(), baselines={},
                             points=[better_unenriched, good], failures=[])
        assert pick_best_point(result, 11) is good
