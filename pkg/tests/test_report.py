from __future__ import annotations

import pandas as pd

from bsqz.report import generate_report_md, reward_table, svg_line_chart


def test_svg_chart_draws_each_series() -> None:
    svg = svg_line_chart({"a": ([1, 2, 3], [1.0, 2.0, 4.0]), "b<c": ([1, 2], [3.0, 3.0])}, "T & T", "x", "y")
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count("<polyline") == 2
    assert "T &amp; T" in svg
    assert "b&lt;c" in svg


def test_log_axis_skips_non_positive_points() -> None:
    svg = svg_line_chart({"err": ([1, 2, 3], [0.0, 1e-3, float("nan")])}, "errors", "k", "eps", logy=True)
    line = next(l for l in svg.splitlines() if l.startswith("<polyline"))
    assert len(line.split('points="')[1].split('"')[0].split()) == 1


def test_empty_series_still_renders() -> None:
    svg = svg_line_chart({"none": ([], [])}, "empty", "x", "y")
    assert "<polyline" not in svg
    assert "none" in svg


def test_reward_table_formats_mean_and_std() -> None:
    summary = pd.DataFrame({"policy": ["pnmf k=2", "original"], "mean": [1.234, 5.0], "std": [0.5, 0.0], "n_repeats": [5, 5]})
    t = reward_table(summary)
    assert list(t.columns) == ["policy", "reward", "mean", "std", "n_repeats"]
    assert t["reward"].tolist() == ["1.23±0.50", "5.00±0.00"]
    assert reward_table(summary.iloc[:0]).empty


def test_report_sections() -> None:
    table = pd.DataFrame({"policy": ["vdc lossless-rank", "original"], "reward": ["1.00±0.10", "2.00±0.20"]})
    manifest = {"config": {"model": "chain.pomdp", "compressor.variant": "vdc"}, "config_hash": "abc", "times": {"solve": 1.5, "compress": 0.25}}
    md = generate_report_md(
        manifest,
        table,
        {"vdc lossless-rank": "converged"},
        {"eps_R": 0.0, "eps_T": 1e-3, "value_gap_bound": None, "bound_note": "bound unavailable"},
        [{"check": "pruning-witness", "status": "verified"}],
        ["errors.svg"],
    )
    assert md.startswith("# Belief compression run: chain.pomdp")
    assert "| vdc lossless-rank | 1.00±0.10 | 0.25s | 1.50s |" in md
    assert "| original | 2.00±0.20 | NA | NA |" in md
    assert "- **vdc lossless-rank:** converged" in md
    assert "- **value_gap_bound:** NA" in md
    assert "- Note: bound unavailable" in md
    assert "- **pruning-witness:** verified" in md
    assert "![errors.svg](errors.svg)" in md


def test_report_without_results() -> None:
    md = generate_report_md({}, None, {}, None, [], [])
    assert "run `bsqz eval`" in md
    assert "run `bsqz solve`" in md
    assert "compressor.variant = none" in md
    assert "## 5) Charts" not in md
