"""Figure rendering for the report path.

All plots are written to files (PNG via the Agg backend); nothing is ever
shown interactively.  Inputs are plain row/series structures so figures
can be rebuilt from the delimited outputs alone, and rendering is
deterministic (fixed geometry, no timestamps in metadata).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_PNG_METADATA = {"Software": "coffee"}

_SOURCE_COLORS = {
    "ad_impression": "tab:orange",
    "organic_impression": "tab:blue",
    "video_view": "tab:red",
    "baseline": "black",
}


@dataclass(frozen=True)
class CurveSeries:
    label: str
    enrichment: bool
    max_len: int
    x: tuple[float, ...]
    y: tuple[float, ...]


@dataclass(frozen=True)
class RoiBar:
    label: str
    enrichment: bool
    max_len: int
    curve_auc: float


@dataclass(frozen=True)
class SaturationSeries:
    label: str
    enrichment: bool
    lengths: tuple[int, ...]
    gains: tuple[float, ...]
    saturating: bool


def _color_for(label: str, enriched: bool) -> str:
    if enriched and label == "ad_impression":
        return "tab:green"
    return _SOURCE_COLORS.get(label, "tab:gray")


def render_scaling_curves(series: Sequence[CurveSeries], path) -> Path:
    """NE gain vs normalized training capacity, one line per config point."""
    max_len = max((s.max_len for s in series), default=1) or 1
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
    for s in series:
        ax.plot(
            s.x,
            s.y,
            marker="o",
            markersize=2.5,
            linewidth=1.2,
            color=_color_for(s.label, s.enrichment),
            alpha=0.45 + 0.55 * (s.max_len / max_len),
            label=f"{s.label}{' +enriched' if s.enrichment else ''} r={s.max_len}",
        )
    ax.scatter([0.0], [0.0], color="black", zorder=5, s=18, label="baseline")
    ax.set_xlabel("normalized training capacity")
    ax.set_ylabel("NE gain vs baseline")
    ax.set_title("Training-capacity scaling curves per event source")
    ax.legend(fontsize=6, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, metadata=_PNG_METADATA)
    plt.close(fig)
    return out


def render_saturation(series: Sequence[SaturationSeries], path) -> Path:
    """Final NE gain vs max sequence length, log-x, per source family."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
    for s in series:
        ax.plot(
            s.lengths,
            s.gains,
            marker="s",
            markersize=3,
            color=_color_for(s.label, s.enrichment),
            linestyle="--" if s.enrichment else "-",
            label=(
                f"{s.label}{' +enriched' if s.enrichment else ''}"
                + (" (saturating)" if s.saturating else "")
            ),
        )
    ax.set_xscale("log", base=2)
    ax.set_xlabel("max sequence length")
    ax.set_ylabel("final NE gain")
    ax.set_title("NE gain saturation over sequence length")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, metadata=_PNG_METADATA)
    plt.close(fig)
    return out


def render_roi_bars(bars: Sequence[RoiBar], path, anchor_length: int) -> Path:
    """Curve-AUC bars per source at one anchor length."""
    rows = [b for b in bars if b.max_len == anchor_length]
    fig, ax = plt.subplots(figsize=(6.0, 3.5), dpi=120)
    labels = [f"{b.label}{' +enr' if b.enrichment else ''}" for b in rows]
    values = [b.curve_auc for b in rows]
    colors = [_color_for(b.label, b.enrichment) for b in rows]
    ax.bar(range(len(rows)), values, color=colors)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=7)
    ax.set_ylabel("scaling-curve AUC")
    ax.set_title(f"Per-source ROI at max length {anchor_length}")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, metadata=_PNG_METADATA)
    plt.close(fig)
    return out
