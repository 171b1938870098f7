"""CSV and aligned-text renderings of an :class:`~detcal.experiment.ExperimentReport`.

D-ECE values appear in percent here (fractions stay in the JSON report).

CSV columns, in order::

    variant, iou_threshold, subset, sample_count, repeats,
    baseline_d_ece_pct, calibrated_d_ece_pct,
    baseline_neglected_bins, calibrated_neglected_bins, n_bins_total

Neglected-bin columns are means over repeats.
"""
from __future__ import annotations

import csv
import io

import numpy as np

from .samples import FeatureSubset

CSV_COLUMNS = (
    "variant", "iou_threshold", "subset", "sample_count", "repeats",
    "baseline_d_ece_pct", "calibrated_d_ece_pct",
    "baseline_neglected_bins", "calibrated_neglected_bins", "n_bins_total",
)

BOLD, RESET = "\033[1m", "\033[0m"


def to_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in report.rows:
        writer.writerow([
            r.variant, f"{r.iou_threshold:g}", r.subset, r.sample_count, len(r.baseline),
            f"{100 * r.baseline_mean:.3f}", f"{100 * r.calibrated_mean:.3f}",
            f"{np.mean(r.baseline_neglected):.2f}", f"{np.mean(r.calibrated_neglected):.2f}",
            r.n_bins_total,
        ])
    return buf.getvalue()


def _subsets(report):
    seen = []
    for r in report.rows:
        if r.subset not in seen:
            seen.append(r.subset)
    return seen


def _ious(report):
    seen = []
    for r in report.rows:
        if r.iou_threshold not in seen:
            seen.append(r.iou_threshold)
    return seen


def to_table(report, color=False):
    """One block per variant: IoU levels as rows, subsets as columns.

    With ``color`` the best calibrated value of each (IoU, subset) across
    variants is printed in bold.
    """
    subsets = _subsets(report)
    ious = _ious(report)
    variants = list(report.sample_counts)
    best = {}
    for r in report.rows:
        key = (r.iou_threshold, r.subset)
        best[key] = min(best.get(key, np.inf), r.calibrated_mean)

    width = 11
    header = " " * 12 + "".join(f"{FeatureSubset.parse(s).label:>{width}}" for s in subsets)
    lines = []
    for v in variants:
        lines.append(f"{v}  |D|={report.sample_counts[v]:,}")
        lines.append(header)
        for t in ious:
            lines.append(f"IoU@{t:g}")
            for label, attr in (("Baseline", "baseline_mean"), ("HB", "calibrated_mean")):
                cells = []
                for s in subsets:
                    try:
                        row = report.row(v, t, s)
                    except KeyError:
                        cells.append(f"{'-':>{width}}")
                        continue
                    value = getattr(row, attr)
                    text = f"{100 * value:>{width}.3f}"
                    if color and attr == "calibrated_mean" and value == best[(t, s)]:
                        text = BOLD + text + RESET
                    cells.append(text)
                lines.append(f"  {label:<10}" + "".join(cells))
        lines.append("")

    plot_iou = report.config.get("figure_iou", ious[0])
    if plot_iou not in ious:
        plot_iou = ious[0]
    lines.append(f"Neglected bins (baseline, mean over repeats, IoU@{plot_iou:g})")
    lines.append(header)
    for v in variants:
        cells = []
        for s in subsets:
            row = report.row(v, plot_iou, s)
            cells.append(f"{np.mean(row.baseline_neglected):>{width}.1f}")
        lines.append(f"  {v:<10}" + "".join(cells))
    totals = "".join(f"{report.row(variants[0], plot_iou, s).n_bins_total:>{width}d}" for s in subsets)
    lines.append(f"  {'Total':<10}" + totals)
    return "\n".join(lines) + "\n"
