"""Static, self-contained HTML report for an analysis run."""

from __future__ import annotations

import colorsys
import html
from typing import Mapping, Sequence

import numpy as np

from .analysis import DistributionDelta, PCAProjection, SoftLabelRecord
from .core import LabelSchema

# label index -> colour; extended deterministically past the base list
_BASE_PALETTE = (
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1",
    "#76b7b2", "#edc948", "#ff9da7", "#9c755f", "#bab0ac",
)

_CSS = """
body { font-family: Helvetica, Arial, sans-serif; margin: 2rem; color: #222; }
h1 { font-size: 1.4rem; }
h2 { font-size: 1.15rem; margin-top: 2rem; border-bottom: 1px solid #ccc; }
.example { margin: 1.2rem 0; }
.kl { font-size: 0.9rem; margin: 0.2rem 0 0.4rem; }
.bar-row { display: flex; align-items: center; margin: 0.15rem 0; }
.src { width: 8rem; font-size: 0.85rem; }
.bar { display: flex; width: 36rem; height: 1.3rem; border: 1px solid #888; }
.seg { height: 100%; font-size: 0.7rem; color: #fff; text-align: center; overflow: hidden; line-height: 1.3rem; }
.props { font-size: 0.75rem; color: #555; margin-left: 0.6rem; }
.legend span { display: inline-block; margin-right: 0.8rem; font-size: 0.8rem; }
.swatch { display: inline-block; width: 0.8rem; height: 0.8rem; margin-right: 0.25rem; vertical-align: middle; }
.empty { color: #777; font-style: italic; }
table.agg { border-collapse: collapse; font-size: 0.9rem; }
table.agg td, table.agg th { border: 1px solid #ccc; padding: 0.2rem 0.6rem; }
.figs { display: flex; flex-wrap: wrap; gap: 1rem; }
""".strip()


def label_color(index: int) -> str:
    if index < len(_BASE_PALETTE):
        return _BASE_PALETTE[index]
    hue = (index * 0.618033988749895) % 1.0
    r, g, b = colorsys.hls_to_rgb(hue, 0.5, 0.55)
    return "#{:02x}{:02x}{:02x}".format(round(r * 255), round(g * 255), round(b * 255))


def segment_widths(proportions: Sequence[float]) -> list[tuple[int, str]]:
    """Percent widths for the non-zero entries, summing to exactly 100.

    Widths are kept in units of 1e-4 percent so their decimal rendering adds
    up exactly; the last segment absorbs the rounding remainder.
    """
    units = 1_000_000
    idx = [k for k, p in enumerate(proportions) if p > 0]
    if not idx:
        return []
    w = [int(round(proportions[k] * units)) for k in idx]
    w[-1] = units - sum(w[:-1])
    return [(k, f"{u // 10_000}.{u % 10_000:04d}") for k, u in zip(idx, w)]


def _bar(source: str, proportions, schema: LabelSchema) -> str:
    segs = []
    for k, width in segment_widths(proportions):
        label = schema.min_label + k
        p = float(proportions[k])
        segs.append(
            f'<div class="seg" style="width:{width}%;background:{label_color(k)}" '
            f'title="{html.escape(schema.name(label))}: {p:.4f}">{p:.2f}</div>'
        )
    props = " ".join(f"{schema.name(schema.min_label + k)}={float(p):.4f}" for k, p in enumerate(proportions))
    return (
        f'<div class="bar-row"><span class="src">{html.escape(source)}</span>'
        f'<div class="bar">{"".join(segs)}</div><span class="props">{html.escape(props)}</span></div>'
    )


def _kl_line(rec: SoftLabelRecord) -> str:
    parts = []
    for name, v in rec.kl_by_method.items():
        txt = f"{html.escape(name)} {v:.4f}"
        parts.append(f"<b>{txt}</b>" if name == rec.best_method else txt)
    return f'<p class="kl">KL divergence: {", ".join(parts)}</p>'


def _legend(schema: LabelSchema) -> str:
    items = [
        f'<span><i class="swatch" style="background:{label_color(k)}"></i>{html.escape(schema.name(lab))}</span>'
        for k, lab in enumerate(schema.labels)
    ]
    return f'<div class="legend">{"".join(items)}</div>'


def _scatter_svg(title: str, series: Sequence[tuple[str, str, np.ndarray, np.ndarray]], xlabel: str, ylabel: str, size=(320, 260)) -> str:
    """Minimal scatter plot; each series is (name, colour, xs, ys)."""
    w, h = size
    ml, mr, mt, mb = 40, 10, 24, 34
    xs = np.concatenate([s[2] for s in series]) if series else np.zeros(0)
    ys = np.concatenate([s[3] for s in series]) if series else np.zeros(0)
    if xs.size == 0:
        xs = ys = np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 1, x1 + 1
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 1, y1 + 1

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * (w - ml - mr)

    def sy(v):
        return h - mb - (v - y0) / (y1 - y0) * (h - mt - mb)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<text x="{w / 2:.1f}" y="15" text-anchor="middle" font-size="12">{html.escape(title)}</text>',
        f'<rect x="{ml}" y="{mt}" width="{w - ml - mr}" height="{h - mt - mb}" fill="none" stroke="#999"/>',
        f'<text x="{w / 2:.1f}" y="{h - 6}" text-anchor="middle" font-size="10">{html.escape(xlabel)}</text>',
        f'<text x="10" y="{h / 2:.1f}" text-anchor="middle" font-size="10" transform="rotate(-90 10 {h / 2:.1f})">{html.escape(ylabel)}</text>',
        f'<text x="{ml}" y="{h - mb + 11}" font-size="8">{x0:.2f}</text>',
        f'<text x="{w - mr}" y="{h - mb + 11}" font-size="8" text-anchor="end">{x1:.2f}</text>',
        f'<text x="{ml - 2}" y="{h - mb}" font-size="8" text-anchor="end">{y0:.2f}</text>',
        f'<text x="{ml - 2}" y="{mt + 8}" font-size="8" text-anchor="end">{y1:.2f}</text>',
    ]
    for k, (name, colour, sxs, sys_) in enumerate(series):
        for a, b in zip(sxs, sys_):
            out.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2.5" fill="{colour}" fill-opacity="0.7"/>')
        out.append(f'<text x="{ml + 4}" y="{mt + 12 + 11 * k}" font-size="9" fill="{colour}">{html.escape(name)}</text>')
    out.append("</svg>")
    return "".join(out)


def render_report_html(
    records: Sequence[SoftLabelRecord],
    deltas: Mapping[str, DistributionDelta],
    pca: Mapping[str, PCAProjection],
    schema: LabelSchema,
    title: str = "Annotation imputation report",
    aggregate: Mapping[str, dict] | None = None,
) -> str:
    parts = [
        "<!DOCTYPE html>",
        '<html lang="en"><head><meta charset="utf-8">',
        f"<title>{html.escape(title)}</title>",
        f"<style>\n{_CSS}\n</style></head><body>",
        f"<h1>{html.escape(title)}</h1>",
    ]
    if aggregate:
        rows = "".join(
            f"<tr><td>{html.escape(m)}</td><td>{a['mean']:.4f}</td><td>{a['std']:.4f}</td></tr>"
            for m, a in aggregate.items()
        )
        parts.append('<h2>KL divergence from original</h2><table class="agg"><tr><th>method</th><th>mean</th><th>std</th></tr>' + rows + "</table>")
    if deltas:
        rows = "".join(
            f"<tr><td>{html.escape(m)}</td><td>{d.avg_variance_change:.4f}</td><td>{d.avg_disagreement_change:.4f}</td></tr>"
            for m, d in deltas.items()
        )
        parts.append('<h2>Average change after imputation</h2><table class="agg"><tr><th>method</th><th>variance</th><th>disagreement rate</th></tr>' + rows + "</table>")

    parts.append("<h2>Soft labels</h2>")
    if not records:
        parts.append('<p class="empty">No examples to display.</p>')
    else:
        parts.append(_legend(schema))
        for rec in records:
            parts.append(f'<div class="example"><h3>Example {rec.item}</h3>')
            parts.append(_kl_line(rec))
            parts.append(_bar("original", rec.original, schema))
            for name, q in rec.imputed_by_method.items():
                parts.append(_bar(name, q, schema))
            parts.append("</div>")

    if pca:
        parts.append('<h2>PCA projection</h2><div class="figs">')
        for k, (name, proj) in enumerate(pca.items()):
            c = proj.coordinates
            parts.append(_scatter_svg(name, [(name, _BASE_PALETTE[k % len(_BASE_PALETTE)], c[:, 0], c[:, 1])], "PC1", "PC2"))
        parts.append("</div>")
    if deltas:
        parts.append('<h2>Variance vs disagreement</h2><div class="figs">')
        for name, d in deltas.items():
            before = (
                "original", "#4e79a7",
                np.array([r["disagreement_before"] for r in d.per_item]),
                np.array([r["variance_before"] for r in d.per_item]),
            )
            after = (
                name, "#e15759",
                np.array([r["disagreement_after"] for r in d.per_item]),
                np.array([r["variance_after"] for r in d.per_item]),
            )
            parts.append(_scatter_svg(f"{name}: variance vs disagreement", [before, after], "disagreement rate", "variance"))
        parts.append("</div>")
    parts.append("</body></html>")
    return "\n".join(parts) + "\n"
