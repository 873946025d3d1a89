"""Matplotlib figures written next to the NDJSON analysis output."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .analysis import DistributionDelta, PCAProjection, SoftLabelRecord  # noqa: E402
from .core import LabelSchema  # noqa: E402
from .report import label_color  # noqa: E402

# strip volatile metadata so reruns give identical bytes
_PNG_META = {"Software": None}
_RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "figure.dpi": 100,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return path


def pca_figure(projections: Mapping[str, PCAProjection], path) -> Path:
    with plt.rc_context(_RC):
        n = max(len(projections), 1)
        fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), squeeze=False)
        for ax, (name, proj) in zip(axes[0], projections.items()):
            ax.scatter(proj.coordinates[:, 0], proj.coordinates[:, 1], s=6, alpha=0.6)
            ax.set_title(name)
            ax.set_xlabel("PC1")
            ax.set_ylabel("PC2")
        fig.tight_layout()
        return _save(fig, path)


def variance_disagreement_figure(deltas: Mapping[str, DistributionDelta], path) -> Path:
    with plt.rc_context(_RC):
        n = max(len(deltas), 1)
        fig, axes = plt.subplots(1, n, figsize=(3.4 * n, 3.0), squeeze=False)
        for ax, (name, d) in zip(axes[0], deltas.items()):
            rows = d.per_item
            ax.scatter([r["disagreement_before"] for r in rows], [r["variance_before"] for r in rows], s=6, label="original")
            ax.scatter([r["disagreement_after"] for r in rows], [r["variance_after"] for r in rows], s=6, label=name)
            ax.set_xlabel("disagreement rate")
            ax.set_ylabel("variance")
            ax.set_title(f"{name} (avg dVar {d.avg_variance_change:+.3f})")
            ax.legend(loc="upper left")
        fig.tight_layout()
        return _save(fig, path)


def softlabel_bars_figure(records: Sequence[SoftLabelRecord], schema: LabelSchema, path, limit: int = 8) -> Path:
    """Stacked horizontal bars, one row per source, for the first ``limit`` examples."""
    shown = list(records)[:limit]
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(max(len(shown), 1), 1, figsize=(7.0, 1.0 + 1.1 * max(len(shown), 1)), squeeze=False)
        for ax, rec in zip(axes[:, 0], shown):
            sources = [("original", rec.original)] + list(rec.imputed_by_method.items())
            for row, (name, props) in enumerate(sources):
                left = 0.0
                for k, p in enumerate(props):
                    if p > 0:
                        ax.barh(row, p, left=left, color=label_color(k), edgecolor="white", height=0.8)
                        left += p
            ax.set_yticks(range(len(sources)))
            ax.set_yticklabels([s[0] for s in sources])
            ax.invert_yaxis()
            ax.set_xlim(0, 1)
            kl = ", ".join(f"{m} {v:.3f}" for m, v in rec.kl_by_method.items())
            ax.set_title(f"Example {rec.item}  KL: {kl}", loc="left")
        if not shown:
            axes[0, 0].text(0.5, 0.5, "no examples", ha="center", va="center")
            axes[0, 0].set_axis_off()
        handles = [plt.Rectangle((0, 0), 1, 1, color=label_color(k)) for k in range(schema.n_labels)]
        fig.legend(handles, [schema.name(lab) for lab in schema.labels], loc="lower center", ncol=min(schema.n_labels, 10))
        fig.tight_layout(rect=(0, 0.08, 1, 1))
        return _save(fig, path)


def write_figures(report_dir, schema: LabelSchema, records, deltas, pca) -> list[Path]:
    out = Path(report_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [
        pca_figure(pca, out / "pca.png"),
        variance_disagreement_figure(deltas, out / "variance_disagreement.png"),
        softlabel_bars_figure(records, schema, out / "soft_labels.png"),
    ]


def rmse_figure(table: Mapping[str, float], path, dataset: str = "dataset") -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.0, 2.6))
        names = list(table)
        ax.bar(names, [table[n] for n in names], color=[label_color(k) for k in range(len(names))])
        ax.set_ylabel("heldout RMSE")
        ax.set_title(dataset)
        fig.tight_layout()
        return _save(fig, path)

