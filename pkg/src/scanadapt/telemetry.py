"""CSV telemetry for filtering and training runs, plus the report builder.

Floats are serialized with repr() so they round-trip exactly; a report
rebuilt from the CSVs reproduces threshold values bit for bit. All files
are written atomically.
"""

import csv
import io
from pathlib import Path

import numpy as np

from .scanio import atomic_write_bytes
from .train import ConfidenceHistogram, TelemetryRow

FILTER_LOG = "filter_log.csv"
TRAINING_LOG = "training_log.csv"
HISTOGRAM_FILE = "confidence_hist.csv"
REPORT_RETAINED = "report_retained.csv"
REPORT_THRESHOLDS = "report_thresholds.csv"
REPORT_HISTOGRAM = "report_histogram.csv"


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    atomic_write_bytes(path, buf.getvalue().encode())


def write_filter_log(path, rows: list, num_classes: int) -> None:
    """Per-iteration filter telemetry.

    Columns: iteration, points, warmup, tau_global, then per class c the
    class threshold, pseudo-label count, kept count under the active
    filter, and kept counts under fixed thresholds 0.85 / 0.90.
    """
    header = ["iteration", "points", "warmup", "tau_global"]
    for c in range(num_classes):
        header += [
            f"tau_class_{c}",
            f"pseudo_{c}",
            f"kept_{c}",
            f"kept85_{c}",
            f"kept90_{c}",
        ]
    out = []
    for r in rows:
        row = [r.iteration, r.points, int(r.warmup), r.tau_global]
        for c in range(num_classes):
            row += [
                r.tau_class[c],
                int(r.pseudo_counts[c]),
                int(r.kept_counts[c]),
                int(r.kept_fixed85[c]),
                int(r.kept_fixed90[c]),
            ]
        out.append(row)
    write_csv(path, header, out)


def read_filter_log(path):
    """Rows of the filter log as TelemetryRow objects (loss fields NaN)."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            num_classes = sum(1 for k in rec if k.startswith("tau_class_"))
            rows.append(
                TelemetryRow(
                    iteration=int(rec["iteration"]),
                    points=int(rec["points"]),
                    warmup=bool(int(rec["warmup"])),
                    tau_global=float(rec["tau_global"]),
                    tau_class=np.array(
                        [float(rec[f"tau_class_{c}"]) for c in range(num_classes)]
                    ),
                    pseudo_counts=np.array(
                        [int(rec[f"pseudo_{c}"]) for c in range(num_classes)]
                    ),
                    kept_counts=np.array(
                        [int(rec[f"kept_{c}"]) for c in range(num_classes)]
                    ),
                    kept_fixed85=np.array(
                        [int(rec[f"kept85_{c}"]) for c in range(num_classes)]
                    ),
                    kept_fixed90=np.array(
                        [int(rec[f"kept90_{c}"]) for c in range(num_classes)]
                    ),
                )
            )
    return rows


def write_training_log(path, rows: list, num_classes: int) -> None:
    """Loss terms, thresholds and per-class retained fractions per iteration."""
    header = [
        "iteration",
        "loss_total",
        "dice_s2t",
        "ce_s2t",
        "dice_t2s",
        "ce_t2s",
        "tau_global",
        "tau_class_mean",
    ] + [f"retained_{c}" for c in range(num_classes)]
    out = []
    for r in rows:
        finite = np.isfinite(r.tau_class)
        tau_mean = float(r.tau_class[finite].mean()) if finite.any() else float("nan")
        out.append(
            [
                r.iteration,
                r.loss_total,
                r.dice_s2t,
                r.ce_s2t,
                r.dice_t2s,
                r.ce_t2s,
                r.tau_global,
                tau_mean,
            ]
            + list(r.retained_fractions())
        )
    write_csv(path, header, out)


def write_histogram(path, hist: ConfidenceHistogram) -> None:
    """Per-class confidence histogram: class, bin bounds, raw and
    weighted counts."""
    header = ["class", "bin_lo", "bin_hi", "count_raw", "count_weighted"]
    rows = []
    nbins = hist.edges.shape[0] - 1
    for c in range(hist.num_classes):
        for b in range(nbins):
            rows.append(
                [
                    c,
                    hist.edges[b],
                    hist.edges[b + 1],
                    int(hist.raw[c, b]),
                    int(hist.weighted[c, b]),
                ]
            )
    write_csv(path, header, rows)


def read_histogram(path) -> ConfidenceHistogram:
    with open(path, newline="") as fh:
        recs = list(csv.DictReader(fh))
    if not recs:
        raise ValueError(f"{path}: empty histogram file")
    num_classes = max(int(r["class"]) for r in recs) + 1
    nbins = sum(1 for r in recs if int(r["class"]) == 0)
    hist = ConfidenceHistogram(num_classes, nbins)
    for r in recs:
        c = int(r["class"])
        b = int(round(float(r["bin_lo"]) * nbins))
        hist.raw[c, b] = int(r["count_raw"])
        hist.weighted[c, b] = int(r["count_weighted"])
    return hist


def build_report(telemetry_dir, out_dir) -> dict:
    """Digest a telemetry directory into plot-ready report CSVs.

    Writes per-class retained fractions (dynamic filter vs fixed 0.85 /
    0.90, aggregated over post-warmup iterations when any exist),
    threshold-line metadata taken verbatim from the final iteration, and
    a copy of the per-class confidence histogram. Returns the retained
    fraction table as a dict of arrays.
    """
    telemetry_dir = Path(telemetry_dir)
    out_dir = Path(out_dir)
    log_path = telemetry_dir / FILTER_LOG
    if not log_path.exists():
        raise FileNotFoundError(f"no {FILTER_LOG} under {telemetry_dir}")
    rows = read_filter_log(log_path)
    if not rows:
        raise ValueError(f"{log_path}: empty telemetry")
    num_classes = rows[0].tau_class.shape[0]

    steady = [r for r in rows if not r.warmup]
    pool = steady if steady else rows
    pseudo = np.sum([r.pseudo_counts for r in pool], axis=0)
    kept = np.sum([r.kept_counts for r in pool], axis=0)
    kept85 = np.sum([r.kept_fixed85 for r in pool], axis=0)
    kept90 = np.sum([r.kept_fixed90 for r in pool], axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(pseudo > 0, kept / pseudo, np.nan)
        frac85 = np.where(pseudo > 0, kept85 / pseudo, np.nan)
        frac90 = np.where(pseudo > 0, kept90 / pseudo, np.nan)
    retained_rows = [
        [c, int(pseudo[c]), frac[c], frac85[c], frac90[c]] for c in range(num_classes)
    ]
    write_csv(
        out_dir / REPORT_RETAINED,
        ["class", "pseudo_count", "retained", "retained_fixed85", "retained_fixed90"],
        retained_rows,
    )

    last = rows[-1]
    thr_rows = [["tau_global", last.tau_global]]
    thr_rows += [[f"tau_class_{c}", last.tau_class[c]] for c in range(num_classes)]
    thr_rows += [["fixed_085", 0.85], ["fixed_090", 0.9]]
    write_csv(out_dir / REPORT_THRESHOLDS, ["name", "value"], thr_rows)

    hist_path = telemetry_dir / HISTOGRAM_FILE
    if hist_path.exists():
        hist = read_histogram(hist_path)
        write_histogram(out_dir / REPORT_HISTOGRAM, hist)

    return {
        "pseudo": pseudo,
        "retained": frac,
        "retained_fixed85": frac85,
        "retained_fixed90": frac90,
        "tau_global": last.tau_global,
        "tau_class": last.tau_class,
    }
