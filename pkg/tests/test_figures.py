"""Figure rendering: files exist and bytes are deterministic."""

from coffee.figures import (
    CurveSeries,
    RoiBar,
    SaturationSeries,
    render_roi_bars,
    render_saturation,
    render_scaling_curves,
)

SERIES = [
    CurveSeries(label="ad_impression", enrichment=False, max_len=100,
                x=(0.0, 0.5, 1.0), y=(0.0, 0.05, 0.08)),
    CurveSeries(label="video_view", enrichment=False, max_len=100,
                x=(0.0, 0.5, 1.0), y=(0.0, 0.01, 0.02)),
]
BARS = [
    RoiBar(label="ad_impression", enrichment=False, max_len=100, curve_auc=0.4),
    RoiBar(label="ad_impression", enrichment=True, max_len=100, curve_auc=0.6),
]
SATURATION = [
    SaturationSeries(label="ad_impression", enrichment=False,
                     lengths=(50, 100, 200), gains=(0.1, 0.14, 0.15),
                     saturating=True),
]


def test_renders_png_files(tmp_path):
    a = render_scaling_curves(SERIES, tmp_path / "curves.png")
    b = render_roi_bars(BARS, tmp_path / "roi.png", anchor_length=100)
    c = render_saturation(SATURATION, tmp_path / "sat.png")
    for path in (a, b, c):
        assert path.exists()
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_rendering_is_deterministic(tmp_path):
    one = render_scaling_curves(SERIES, tmp_path / "one.png")
    two = render_scaling_curves(SERIES, tmp_path / "two.png")
    assert one.read_bytes() == two.read_bytes()
