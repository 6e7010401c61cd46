from __future__ import annotations

import math
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from bsqz.evaluation import mean_std

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")

Series = Mapping[str, Tuple[Sequence[float], Sequence[float]]]


def _ticks(lo: float, hi: float, n: int = 5) -> List[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt(v: float) -> str:
    if v != 0 and (abs(v) >= 1e4 or abs(v) < 1e-2):
        return f"{v:.1e}"
    return f"{v:.3g}"


def svg_line_chart(
    series: Series,
    title: str,
    xlabel: str,
    ylabel: str,
    logy: bool = False,
    width: int = 640,
    height: int = 400,
) -> str:
    """Standalone SVG polyline chart. Non-finite points (and non-positive ones on a log axis) are skipped."""
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom

    clean: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    for name, (xs, ys) in series.items():
        x, y = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y) & ((y > 0) if logy else True)
        clean[name] = (x[ok], np.log10(y[ok]) if logy else y[ok])

    allx = np.concatenate([x for x, _ in clean.values()] + [np.zeros(0)])
    ally = np.concatenate([y for _, y in clean.values()] + [np.zeros(0)])
    x0, x1 = (float(allx.min()), float(allx.max())) if allx.size else (0.0, 1.0)
    y0, y1 = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(x: float) -> float:
        return left + (x - x0) / (x1 - x0) * pw

    def py(y: float) -> float:
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{_escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.1f}" y1="{top + ph}" x2="{px(t):.1f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(
            f'<text x="{px(t):.1f}" y="{top + ph + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{_fmt(t)}</text>'
        )
    for t in _ticks(y0, y1):
        label = _fmt(10**t) if logy else _fmt(t)
        out.append(f'<line x1="{left - 5}" y1="{py(t):.1f}" x2="{left}" y2="{py(t):.1f}" stroke="black"/>')
        out.append(
            f'<text x="{left - 8}" y="{py(t) + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="11">{label}</text>'
        )
    out.append(
        f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">{_escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">{_escape(ylabel)}</text>'
    )
    for i, (name, (x, y)) in enumerate(clean.items()):
        color = PALETTE[i % len(PALETTE)]
        if x.size:
            pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(
            f'<text x="{left + pw + 36}" y="{ly + 4}" font-family="sans-serif" font-size="11">{_escape(name)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def reward_table(summary: pd.DataFrame, digits: int = 2) -> pd.DataFrame:
    """policy, reward ("mean±std"), mean, std, n_repeats."""
    if summary.empty:
        return pd.DataFrame(columns=["policy", "reward", "mean", "std", "n_repeats"])
    t = summary.copy()
    t["reward"] = [mean_std(m, s, digits) for m, s in zip(t["mean"], t["std"])]
    return t[["policy", "reward", "mean", "std", "n_repeats"]]


def _seconds(x: Any) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "NA"
    return f"{float(x):.2f}s"


def generate_report_md(
    manifest: Mapping[str, Any],
    table: Optional[pd.DataFrame],
    verdicts: Mapping[str, str],
    errors: Optional[Mapping[str, Any]],
    diagnostics: Sequence[Mapping[str, Any]],
    charts: Sequence[str],
) -> str:
    times = manifest.get("times", {}) or {}
    cfg = manifest.get("config", {}) or {}

    lines = []
    lines.append(f"# Belief compression run: {cfg.get('model', 'NA')}")
    lines.append(f"**Compressor:** {cfg.get('compressor.variant', 'NA')}  \n**Config hash:** `{manifest.get('config_hash', 'NA')}`")
    lines.append("")
    lines.append("## 1) Policy reward")
    if table is not None and not table.empty:
        lines.append("| Policy | Reward | Time (C) | Time (P) |")
        lines.append("|---|---|---|---|")
        for r in table.to_dict(orient="records"):
            tp = times.get("solve_original") if r["policy"] == "original" else times.get("solve")
            tc = None if r["policy"] == "original" else times.get("compress")
            lines.append(f"| {r['policy']} | {r['reward']} | {_seconds(tc)} | {_seconds(tp)} |")
    else:
        lines.append("- No evaluation results yet (run `bsqz eval`).")
    lines.append("")
    lines.append("## 2) Value iteration")
    if verdicts:
        for name, v in verdicts.items():
            lines.append(f"- **{name}:** {v}")
    else:
        lines.append("- No solver trace yet (run `bsqz solve`).")
    lines.append("")
    lines.append("## 3) Compression errors")
    if errors:
        for key in ("eps_R", "eps_T", "A_inf", "contraction_margin", "value_gap_bound", "reconstruction_residual"):
            v = errors.get(key)
            lines.append(f"- **{key}:** {'NA' if v is None else _fmt(float(v))}")
        if errors.get("bound_note"):
            lines.append(f"- Note: {errors['bound_note']}")
    else:
        lines.append("- No compressed model (compressor.variant = none).")
    lines.append("")
    lines.append("## 4) Diagnostics")
    if diagnostics:
        for d in diagnostics:
            lines.append(f"- **{d.get('check')}:** {d.get('status')}")
    else:
        lines.append("- Not run (run `bsqz diagnose`).")
    if charts:
        lines.append("")
        lines.append("## 5) Charts")
        for c in charts:
            lines.append(f"![{c}]({c})")
    return "\n".join(lines)
