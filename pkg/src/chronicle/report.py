"""Renderers for metrics reports and corpus statistics: JSON, delimited
TSV, a fixed-width text grid, and matplotlib figures written next to the
delimited output."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import NEW, RECURRING, MetricsReport
from .timeline import CorpusStats

_FIG_DPI = 110


def range_label(range_days: int | None) -> str:
    return "inf" if range_days is None else f"{range_days}d"


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.3f}"


def report_to_json_obj(report: MetricsReport) -> dict:
    ec = report.config
    cells = []
    per_concept = []
    for g in ec.type_groups:
        for r in ec.time_ranges:
            for k in ec.top_ks:
                for m in ec.novelty_modes:
                    cell = report.cells[(g, r, k, m)]
                    cells.append(
                        {
                            "group": g,
                            "time_range_days": r,
                            "top_k": k,
                            "novelty": m,
                            "tp": cell.tp,
                            "fp": cell.fp,
                            "fn": cell.fn,
                            "precision": cell.precision,
                            "recall": cell.recall,
                        }
                    )
                    for concept in sorted(cell.per_concept):
                        tp, fp, fn = cell.per_concept[concept]
                        per_concept.append(
                            {
                                "group": g,
                                "time_range_days": r,
                                "top_k": k,
                                "novelty": m,
                                "concept": concept,
                                "tp": tp,
                                "fp": fp,
                                "fn": fn,
                            }
                        )
    return {
        "n_positions": report.n_positions,
        "cells": cells,
        "per_concept": per_concept,
    }


def write_report_json(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report_to_json_obj(report), indent=2) + "\n", encoding="utf-8"
    )


def write_report_tsv(report: MetricsReport, path: str | Path) -> None:
    ec = report.config
    lines = ["group\ttime_range\ttop_k\tnovelty\ttp\tfp\tfn\tprecision\trecall"]
    for g in ec.type_groups:
        for r in ec.time_ranges:
            for k in ec.top_ks:
                for m in ec.novelty_modes:
                    c = report.cells[(g, r, k, m)]
                    lines.append(
                        f"{g}\t{range_label(r)}\t{k}\t{m}\t{c.tp}\t{c.fp}\t{c.fn}"
                        f"\t{_fmt(c.precision)}\t{_fmt(c.recall)}"
                    )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_report_text(report: MetricsReport) -> str:
    """Fixed-width precision/recall grid, one row per (group, range, k)."""
    ec = report.config
    has_new = NEW in ec.novelty_modes
    has_rec = RECURRING in ec.novelty_modes
    header = f"{'Concept Type':<14}{'Range':<8}{'Top-K':<7}"
    if has_new:
        header += f"{'New P/R':<16}"
    if has_rec:
        header += f"{'Recurring P/R':<16}"
    lines = [header, "-" * len(header)]
    for g in ec.type_groups:
        for r in ec.time_ranges:
            for k in ec.top_ks:
                row = f"{g:<14}{range_label(r):<8}{k:<7}"
                if has_new:
                    c = report.cells[(g, r, k, NEW)]
                    row += f"{_fmt(c.precision)}/{_fmt(c.recall):<12}"
                if has_rec:
                    c = report.cells[(g, r, k, RECURRING)]
                    row += f"{_fmt(c.precision)}/{_fmt(c.recall):<12}"
                lines.append(row)
    lines.append("")
    lines.append(f"positions evaluated: {report.n_positions}")
    return "\n".join(lines) + "\n"


def render_report_figures(report: MetricsReport, out_dir: str | Path) -> list[Path]:
    """Write precision/recall bar panels and a per-concept scatter."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ec = report.config
    written: list[Path] = []

    groups = list(ec.type_groups)
    ks = list(ec.top_ks)
    fig, axes = plt.subplots(
        len(ec.novelty_modes),
        len(ec.time_ranges),
        figsize=(4.2 * len(ec.time_ranges), 3.2 * len(ec.novelty_modes)),
        squeeze=False,
    )
    width = 0.8 / len(ks)
    xs = np.arange(len(groups))
    for row, m in enumerate(ec.novelty_modes):
        for col, r in enumerate(ec.time_ranges):
            ax = axes[row][col]
            for ki, k in enumerate(ks):
                vals = [
                    report.cells[(g, r, k, m)].precision or 0.0 for g in groups
                ]
                ax.bar(xs + ki * width, vals, width=width, label=f"k={k}")
            ax.set_xticks(xs + width * (len(ks) - 1) / 2)
            ax.set_xticklabels(groups, rotation=30, ha="right", fontsize=8)
            ax.set_ylim(0, 1.05)
            ax.set_title(f"{m} / range {range_label(r)}", fontsize=9)
            if col == 0:
                ax.set_ylabel("precision")
    axes[0][0].legend(fontsize=8)
    fig.suptitle("Precision by type group, top-k, window, and novelty", fontsize=11)
    fig.tight_layout(rect=(0, 0, 1, 0.96))
    path = out_dir / "precision_grid.png"
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)
    written.append(path)

    # Per-concept true/false positive scatter at the widest cell with data.
    k_max = max(ks)
    cell = None
    for m in ec.novelty_modes:
        for r in ec.time_ranges:
            candidate = report.cells[(ec.type_groups[0], r, k_max, m)]
            if candidate.per_concept:
                cell = (candidate, r, m)
                break
        if cell:
            break
    if cell:
        c, r, m = cell
        tps = [t[0] for t in c.per_concept.values()]
        fps = [t[1] for t in c.per_concept.values()]
        fig, ax = plt.subplots(figsize=(4.5, 4))
        ax.scatter(fps, tps, s=14, alpha=0.7)
        ax.set_xlabel("false positives")
        ax.set_ylabel("true positives")
        ax.set_title(
            f"Per-concept tallies ({ec.type_groups[0]}, {range_label(r)}, "
            f"k={k_max}, {m})",
            fontsize=9,
        )
        fig.tight_layout()
        path = out_dir / "per_concept.png"
        fig.savefig(path, dpi=_FIG_DPI)
        plt.close(fig)
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# Corpus statistics


def stats_to_json_obj(stats: CorpusStats) -> dict:
    def strata(d):
        return {
            k: {
                "count": v.count,
                "mean_length": v.mean_length,
                "mean_span_years": v.mean_span_years,
            }
            for k, v in d.items()
        }

    return {
        "n_timelines": stats.n_timelines,
        "n_patients": stats.n_patients,
        "mean_length": stats.mean_length,
        "mean_span_years": stats.mean_span_years,
        "patients_by_sex": stats.patients_by_sex,
        "patients_by_ethnicity": stats.patients_by_ethnicity,
        "patients_by_age_band": stats.patients_by_age_band,
        "by_sex": strata(stats.by_sex),
        "by_ethnicity": strata(stats.by_ethnicity),
        "by_age_band": strata(stats.by_age_band),
        "mean_concepts_by_type": stats.mean_concepts_by_type,
    }


def write_stats_json(stats: CorpusStats, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(stats_to_json_obj(stats), indent=2) + "\n", encoding="utf-8"
    )


def write_stats_tsv(stats: CorpusStats, path: str | Path) -> None:
    lines = ["stratum\tvalue\tpatients\ttimelines\tmean_length\tmean_span_years"]

    def emit(kind, counts, summaries):
        for label, summary in summaries.items():
            patients = counts.get(label, "")
            lines.append(
                f"{kind}\t{label}\t{patients}\t{summary.count}"
                f"\t{summary.mean_length:.2f}\t{summary.mean_span_years:.2f}"
            )

    lines.append(
        f"all\tall\t{stats.n_patients}\t{stats.n_timelines}"
        f"\t{stats.mean_length:.2f}\t{stats.mean_span_years:.2f}"
    )
    emit("sex", stats.patients_by_sex, stats.by_sex)
    emit("ethnicity", stats.patients_by_ethnicity, stats.by_ethnicity)
    emit("age_band", stats.patients_by_age_band, stats.by_age_band)
    for t, mean in stats.mean_concepts_by_type.items():
        lines.append(f"type_mean\t{t}\t\t\t{mean:.2f}\t")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_stats_figure(stats: CorpusStats, path: str | Path) -> Path:
    """Mean timeline length and timeline counts per age band."""
    bands = list(stats.by_age_band)
    lengths = [stats.by_age_band[b].mean_length for b in bands]
    counts = [stats.by_age_band[b].count for b in bands]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.5, 3.4))
    ax1.bar(bands, lengths, color="#4878a8")
    ax1.set_ylabel("mean length (concepts)")
    ax1.set_xlabel("age band")
    ax1.tick_params(axis="x", rotation=30)
    ax2.bar(bands, counts, color="#a85448")
    ax2.set_ylabel("timelines")
    ax2.set_xlabel("age band")
    ax2.tick_params(axis="x", rotation=30)
    fig.suptitle("Timelines by age band", fontsize=11)
    fig.tight_layout(rect=(0, 0, 1, 0.94))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)
    return path
