"""CSV / JSON tables and matplotlib SVG figures for K-step reports."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .streaming import KStepReport  # noqa: E402

CSV_COLUMNS = ["k", "sAP", "sAP50", "sAP75", "sAPs", "sAPm", "sAPl"]
FORMATS = ("csv", "json", "svg")

# fixed hash salt and no date stamp keep SVG output byte-stable across runs
_SVG_RC = {
    "svg.hashsalt": "streamsap",
    "svg.fonttype": "none",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.5,
    "lines.markersize": 5,
}


def fmt(value: float | None) -> str:
    return "" if value is None else repr(round(float(value), 6))


def report_rows(report: KStepReport) -> list[list[str]]:
    rows = []
    for k in range(1, report.horizon + 1):
        h = report.reports[k].headline()
        rows.append([str(k)] + [fmt(h[c]) for c in CSV_COLUMNS[1:]])
    return rows


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from None
    return path


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_report(path) -> KStepReport:
    return KStepReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def plot_curves(
    series: Mapping[str, Sequence[float | None]],
    path,
    title: str = "sAP vs forecast horizon",
) -> Path:
    """Line plot of sAP_k against k, one line per series, saved as SVG."""
    path = Path(path)
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for i, (label, values) in enumerate(series.items()):
            ks = [k for k, v in enumerate(values, start=1) if v is not None]
            vs = [values[k - 1] for k in ks]
            (line,) = ax.plot(ks, vs, marker="o", label=label)
            line.set_gid(f"curve-{i}")
        ax.set_xlabel("k (frames ahead)")
        ax.set_ylabel("sAP$_k$")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(title)
        if len(series) > 1:
            ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def write_report(
    report: KStepReport,
    out_dir,
    formats: Iterable[str] = FORMATS,
    stem: str = "report",
    label: str = "sAP",
) -> list[Path]:
    """Write ``report`` as CSV rows (one per k), JSON and/or an SVG plot."""
    if not report.reports:
        raise ValueError("report is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for f in formats:
        if f == "csv":
            written.append(write_csv(out / f"{stem}.csv", CSV_COLUMNS, report_rows(report)))
        elif f == "json":
            written.append(write_json(out / f"{stem}.json", report.to_dict()))
        elif f in ("svg", "svg_plot"):
            written.append(plot_curves({label: report.curve()}, out / f"{stem}.svg"))
        else:
            raise ValueError(f"unknown report format {f!r}")
    return written
