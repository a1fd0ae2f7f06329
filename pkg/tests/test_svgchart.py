"""Deterministic SVG emitter: validation, structure, escaping, formatting."""

import numpy as np
import pytest

from ensemble_track.svgchart import PALETTE, Series, line_chart
from ensemble_track.svgchart import _fmt, _nice_step, _ticks


def simple_series(label="run", **kwargs):
    return Series(x=np.array([0.0, 1.0, 2.0]), y=np.array([0.0, 1.0, 0.5]), label=label, **kwargs)


class TestSeriesValidation:
    def test_rejects_mismatched_shapes(self):
        with pytest.raises(ValueError, match="matching 1-d"):
            Series(x=np.array([0.0, 1.0]), y=np.array([0.0, 1.0, 2.0]), label="bad")

    def test_rejects_two_dimensional_input(self):
        with pytest.raises(ValueError, match="matching 1-d"):
            Series(x=np.zeros((2, 2)), y=np.zeros((2, 2)), label="bad")

    def test_rejects_single_samples(self):
        with pytest.raises(ValueError, match="at least two samples"):
            Series(x=np.array([0.0]), y=np.array([1.0]), label="bad")


class TestLineChart:
    def test_rejects_empty_series_list(self):
        with pytest.raises(ValueError, match="at least one series"):
            line_chart([])

    def test_rejects_all_non_finite_data(self):
        s = Series(x=np.array([0.0, 1.0]), y=np.array([np.nan, np.inf]), label="bad")
        with pytest.raises(ValueError, match="no finite samples"):
            line_chart([s])

    def test_one_polyline_per_series(self):
        svg = line_chart([simple_series("a"), simple_series("b"), simple_series("c")])
        assert svg.count("<polyline") == 3
        assert svg.startswith("<svg ")
        assert svg.rstrip().endswith("</svg>")

    def test_legend_carries_the_labels(self):
        svg = line_chart([simple_series("first run"), simple_series("second run")])
        assert ">first run</text>" in svg
        assert ">second run</text>" in svg

    def test_labels_are_escaped(self):
        svg = line_chart(
            [simple_series("a < b & c > d")],
            title="x < y",
            x_label="t & s",
            y_label="<u>",
        )
        assert "a &lt; b &amp; c &gt; d" in svg
        assert "x &lt; y" in svg
        assert "t &amp; s" in svg
        assert "&lt;u&gt;" in svg
        # no raw unescaped ampersands or angle brackets from the labels
        assert "a < b" not in svg

    def test_palette_cycles_by_default_and_honours_overrides(self):
        svg = line_chart([simple_series("a"), simple_series("b", color="#123456")])
        assert f'stroke="{PALETTE[0]}"' in svg
        assert 'stroke="#123456"' in svg

    def test_dash_pattern_is_emitted(self):
        svg = line_chart([simple_series("a", dash="4,2")])
        assert 'stroke-dasharray="4,2"' in svg

    def test_output_is_deterministic(self):
        make = lambda: line_chart(
            [simple_series("a"), simple_series("b", dash="5,3")],
            title="chart",
            x_label="t",
            y_label="v",
        )
        assert make() == make()

    def test_non_finite_points_are_dropped_from_polylines(self):
        s = Series(
            x=np.array([0.0, 1.0, 2.0, 3.0]),
            y=np.array([0.0, np.nan, 1.0, 0.5]),
            label="gappy",
        )
        svg = line_chart([s])
        start = svg.index("<polyline")
        pts = svg[start:].split('points="')[1].split('"')[0]
        assert len(pts.split()) == 3


class TestAxisHelpers:
    def test_nice_step_picks_125_decades(self):
        assert _nice_step(10.0, 5) == 2.0
        assert _nice_step(1.0, 5) == 0.2
        assert _nice_step(0.7, 5) == 0.1
        assert _nice_step(25.0, 5) == 5.0

    def test_ticks_cover_the_range_with_round_values(self):
        ticks = _ticks(0.0, 10.0)
        assert ticks[0] == 0.0
        assert ticks[-1] == 10.0
        assert all(t in ticks for t in (0.0, 2.0, 4.0, 6.0, 8.0, 10.0))

    def test_degenerate_ranges_are_padded(self):
        ticks = _ticks(3.0, 3.0)
        assert len(ticks) >= 2
        assert ticks[0] <= 3.0 <= ticks[-1]

    def test_ticks_reject_non_finite_ranges(self):
        with pytest.raises(ValueError, match="finite"):
            _ticks(0.0, np.inf)

    def test_fmt_normalises_negative_zero(self):
        assert _fmt(-0.0) == "0"
        assert _fmt(0.25) == "0.25"
        assert _fmt(1e-05) == "1e-05"
