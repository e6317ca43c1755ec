"""Report serialization and figure rendering.

All delimited outputs use shortest round-trip float formatting and fixed row
ordering so re-running a pipeline reproduces them byte for byte. The timing
ledger is the one deliberately volatile artifact (wall clock) and therefore
lives in its own file, never in report.csv.

Figures are matplotlib SVGs rendered with a pinned hashsalt and no Date
metadata, which makes the bytes reproducible for identical input CSVs.
"""

import csv
import statistics
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import DataFormatError

REPORT_COLUMNS = ("dataset", "target_size", "family", "trunk", "M", "seed",
                  "fidelity", "target_acc", "queries")
TIMING_COLUMNS = ("dataset", "target_size", "family", "trunk", "seed",
                  "train_seconds")
CURVE_COLUMNS = ("family", "trunk", "epoch", "variance")
CURVE_RAW_COLUMNS = ("dataset", "target_size", "family", "trunk", "seed",
                     "epoch", "variance")
ERROR_COLUMNS = ("dataset", "target_size", "family", "trunk", "seed", "stage",
                 "message")

SVG_HASHSALT = "steal-lab"


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


def read_rows(path, columns=None):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty CSV", line=1) from None
        if columns is not None and tuple(header) != tuple(columns):
            raise DataFormatError(f"unexpected header {header!r}", line=1)
        return [dict(zip(header, row)) for row in reader]


def write_report(path, rows):
    write_rows(path, REPORT_COLUMNS, rows)


def write_timings(path, rows):
    write_rows(path, TIMING_COLUMNS, rows)


def write_errors(path, rows):
    write_rows(path, ERROR_COLUMNS, rows)


def median_curves(curve_rows, target_size="small"):
    """Collapse per-seed curves to the median variance per (family, trunk,
    epoch) for one target size — the published view of the variance diagnostic."""
    grouped = {}
    for row in curve_rows:
        if row["target_size"] != target_size:
            continue
        key = (row["family"], row["trunk"], row["epoch"])
        grouped.setdefault(key, []).append(row["variance"])
    out = []
    for (family, trunk, epoch), values in sorted(grouped.items()):
        out.append({"family": family, "trunk": trunk, "epoch": epoch,
                    "variance": statistics.median(values)})
    out.sort(key=lambda r: (r["family"], r["trunk"], r["epoch"]))
    return out


def write_curves(path, curve_rows):
    write_rows(path, CURVE_COLUMNS, curve_rows)


def write_curves_raw(path, curve_rows):
    write_rows(path, CURVE_RAW_COLUMNS, curve_rows)


def plot_curves(curves_csv, out_dir):
    """Render one SVG per (family, trunk) from a curves CSV: epoch on x,
    variance on y, linear axes. Byte-deterministic for a fixed input file."""
    rows = read_rows(curves_csv, CURVE_COLUMNS)
    if not rows:
        raise DataFormatError(f"no curve rows in {curves_csv}")
    series = {}
    for row in rows:
        key = (row["family"], row["trunk"])
        series.setdefault(key, []).append((int(row["epoch"]),
                                           float(row["variance"])))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for (family, trunk), points in sorted(series.items()):
        points.sort()
        epochs = [p[0] for p in points]
        values = [p[1] for p in points]
        with plt.rc_context({"svg.hashsalt": SVG_HASHSALT}):
            fig, ax = plt.subplots(figsize=(6.0, 4.0))
            ax.plot(epochs, values, marker="o", markersize=3,
                    label=f"{family} / {trunk}")
            ax.set_xlabel("epoch")
            ax.set_ylabel("prediction variance")
            ax.set_title(f"prediction variance during training: {family} ({trunk})")
            ax.legend(loc="best")
            ax.grid(True, alpha=0.3)
            path = out_dir / f"variance_{family}_{trunk}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
        written.append(path)
    return written


def _median(values):
    return statistics.median(values) if values else float("nan")


def write_summary(path, report_rows, timing_rows, curve_rows=None):
    """Human-readable digest of a finished run."""
    fams = []
    for row in report_rows:
        if row["family"] not in fams:
            fams.append(row["family"])
    lines = ["steal-lab experiment summary", ""]

    sizes = []
    for row in report_rows:
        if row["target_size"] not in sizes:
            sizes.append(row["target_size"])
    lines.append("target accuracy (median over seeds):")
    for size in sizes:
        accs = [row["target_acc"] for row in report_rows
                if row["target_size"] == size and row["target_acc"] is not None]
        lines.append(f"  {size:>8}: {_median(accs):.4f}")
    lines.append("")

    lines.append("fidelity by family (median over sizes/trunks/M/seeds):")
    for fam in fams:
        fids = [row["fidelity"] for row in report_rows
                if row["family"] == fam and row["fidelity"] is not None]
        lines.append(f"  {fam:>14}: {_median(fids):.4f}  ({len(fids)} rows)")
    lines.append("")

    if curve_rows:
        small = curve_rows[0]["target_size"]
        per_run = {}
        for rec in curve_rows:
            if rec["target_size"] != small:
                continue
            key = (rec["family"], rec["trunk"], rec["seed"])
            per_run.setdefault(key, []).append((rec["epoch"], rec["variance"]))
        stats = {}
        for (fam, trunk, _), points in per_run.items():
            values = [v for _, v in sorted(points)]
            stats.setdefault((fam, trunk), {"final": [], "peak": []})
            stats[(fam, trunk)]["final"].append(values[-1])
            stats[(fam, trunk)]["peak"].append(max(values))
        lines.append(f"prediction variance on the {small} target "
                     "(median final / median peak):")
        for (fam, trunk) in sorted(stats):
            s = stats[(fam, trunk)]
            lines.append(f"  {fam:>14} {trunk:>7}: "
                         f"{_median(s['final']):.6f} / {_median(s['peak']):.6f}")
        lines.append("")

    lines.append("training seconds by family (median):")
    for fam in fams:
        secs = [row["train_seconds"] for row in timing_rows
                if row["family"] == fam]
        if secs:
            lines.append(f"  {fam:>14}: {_median(secs):.2f}")
    lines.append("")

    queries = sorted({row["queries"] for row in report_rows
                      if row["queries"] is not None})
    lines.append(f"oracle queries per surrogate set: {queries}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
