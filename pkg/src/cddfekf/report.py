"""CSV, markdown and SVG outputs for a sweep table.

Every writer is a pure function of the table, so output bytes are
reproducible (SVG ids use a fixed hash salt and carry no date).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .harness import SweepTable
from .variants import get_variant

SCHEME_TITLES = {"em": "EM-0.5 methods", "it": "IT-1.5 methods"}


@dataclass(frozen=True)
class ReportBundle:
    sweep_csv: Path
    accuracy_markdown: Path
    timing_csv: Path
    armse_svg: Optional[Path] = None
    timing_svg: Optional[Path] = None


def format_armse(value: Optional[float]) -> str:
    """Scientific notation with 4 significant digits, e.g. ``4.375e2``; ``fail`` for missing."""
    if value is None or not math.isfinite(value):
        return "fail"
    mantissa, exponent = f"{value:.3e}".split("e")
    return f"{mantissa}e{int(exponent)}"


def format_gamma(gamma: float) -> str:
    mantissa, exponent = f"{gamma:.0e}".split("e")
    return f"{mantissa}e{int(exponent)}"


def _num(value: Optional[float]) -> str:
    if value is None or not math.isfinite(value):
        return ""
    return repr(float(value))


def sweep_csv_text(table: SweepTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gamma", "filter", "status", "armse", "cpu_seconds"])
    for r in table.rows:
        w.writerow([repr(float(r.gamma)), r.filter, r.status, _num(r.armse), _num(r.cpu_seconds)])
    return buf.getvalue()


def timing_rows(table: SweepTable) -> list:
    """Per filter: mean of the finite per-run times over all gammas."""
    out = []
    for fid in table.filters:
        times = [r.cpu_seconds for r in table.rows if r.filter == fid and math.isfinite(r.cpu_seconds)]
        mean = sum(times) / len(times) if times else float("nan")
        out.append((fid, get_variant(fid).scheme, mean, len(times)))
    return out


def timing_csv_text(table: SweepTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["filter", "scheme", "cpu_seconds_mean", "scenarios"])
    for fid, scheme, mean, count in timing_rows(table):
        w.writerow([fid, scheme, _num(mean), count])
    return buf.getvalue()


def accuracy_markdown_text(table: SweepTable) -> str:
    """One table per scheme: gamma rows, filter columns, ARMSE or ``fail``."""
    parts = []
    for scheme in ("em", "it"):
        filters = [f for f in table.filters if get_variant(f).scheme == scheme]
        if not filters:
            continue
        parts.append(f"### {SCHEME_TITLES[scheme]}\n")
        parts.append("| gamma | " + " | ".join(filters) + " |")
        parts.append("|---|" + "---|" * len(filters))
        for g in table.gammas:
            cells = [format_armse(table.row(g, f).armse) for f in filters]
            parts.append(f"| {format_gamma(g)} | " + " | ".join(cells) + " |")
        parts.append("")
    return "\n".join(parts)


def _figure_svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def armse_svg_text(table: SweepTable) -> str:
    """ARMSE against gamma on log axes, one polyline per filter up to its breakdown."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "cddfekf", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, 2, figsize=(11, 4.5), sharey=True)
        for ax, scheme in zip(axes, ("em", "it")):
            for fid in table.filters:
                if get_variant(fid).scheme != scheme:
                    continue
                xs, ys = [], []
                for g in table.gammas:
                    r = table.row(g, fid)
                    if not r.completed:
                        break
                    xs.append(g)
                    ys.append(r.armse)
                if xs:
                    ax.plot(xs, ys, marker="o", markersize=3, label=fid)
            ax.set_xscale("log")
            ax.set_yscale("log")
            ax.invert_xaxis()
            ax.set_xlabel("gamma")
            ax.set_title(SCHEME_TITLES[scheme])
            ax.legend(fontsize=7)
        axes[0].set_ylabel("ARMSE")
        fig.tight_layout()
        text = _figure_svg(fig)
        plt.close(fig)
    return text


def timing_svg_text(table: SweepTable) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [r for r in timing_rows(table) if math.isfinite(r[2])]
    with matplotlib.rc_context({"svg.hashsalt": "cddfekf", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(8, 4.5))
        ax.barh([r[0] for r in rows], [r[2] for r in rows])
        ax.set_xlabel("mean CPU seconds per run")
        ax.invert_yaxis()
        fig.tight_layout()
        text = _figure_svg(fig)
        plt.close(fig)
    return text


def emit_reports(table: SweepTable, out_dir, svg: bool = True) -> ReportBundle:
    if not table.rows:
        raise ValueError("cannot report an empty sweep table")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "sweep_csv": (out / "sweep.csv", sweep_csv_text),
        "accuracy_markdown": (out / "accuracy.md", accuracy_markdown_text),
        "timing_csv": (out / "timing.csv", timing_csv_text),
    }
    if svg:
        paths["armse_svg"] = (out / "armse.svg", armse_svg_text)
        paths["timing_svg"] = (out / "timing.svg", timing_svg_text)
    for path, render in paths.values():
        path.write_text(render(table), encoding="utf-8")
    return ReportBundle(**{key: path for key, (path, _) in paths.items()})
