"""Figures and delimited tables for a pipeline report."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps the PNG bytes stable across runs
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def stage_count_rows(report: dict) -> list[tuple[str, int]]:
    c = report["counts"]
    return [(k, int(c.get(k, 0))) for k in ("jobs", "generated", "failed", "kept", "dropped")]


def plot_stage_counts(report: dict, path) -> Path:
    rows = stage_count_rows(report)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar([r[0] for r in rows], [r[1] for r in rows], color="#4c72b0")
        ax.set_ylabel("records")
        ax.set_title(f"{report['dataset']}: {report['method']}")
        return _save(fig, Path(path))


def plot_filter_drops(filter_report: dict, path) -> Path:
    stages = filter_report.get("per_stage", [])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = [s["name"] for s in stages] or ["(none)"]
        evaluated = [s["evaluated"] for s in stages] or [0]
        dropped = [s["dropped"] for s in stages] or [0]
        x = range(len(names))
        ax.bar([i - 0.2 for i in x], evaluated, width=0.4, label="evaluated", color="#8da0cb")
        ax.bar([i + 0.2 for i in x], dropped, width=0.4, label="dropped", color="#e78ac3")
        ax.set_xticks(list(x), names)
        ax.set_ylabel("records")
        ax.set_title(f"filter stages (drop fraction {filter_report.get('drop_fraction', 0.0):.3f})")
        ax.legend(frameon=False)
        return _save(fig, Path(path))


def plot_synthetic_fraction(run_log: list[dict], alpha: float, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        epochs = [e["epoch"] for e in run_log]
        ax.plot(epochs, [e["synthetic_fraction"] for e in run_log], lw=1.2, label="synthetic fraction")
        ax.axhline(alpha, color="k", ls="--", lw=0.8, label=f"alpha = {alpha:g}")
        ax.set_xlabel("epoch")
        ax.set_ylabel("fraction of slots")
        ax.set_ylim(0, 1)
        ax.legend(frameon=False)
        return _save(fig, Path(path))


def render_report(report: dict, out_dir, run_log: list[dict] | None = None) -> list[Path]:
    """Write CSV tables and PNG figures for ``report`` under ``out_dir``."""
    out_dir = Path(out_dir)
    written = [
        _write_csv(out_dir / "stage_counts.csv", ["count", "value"], stage_count_rows(report)),
        _write_csv(
            out_dir / "stages.csv", ["stage", "status"], sorted(report.get("stages", {}).items())
        ),
        plot_stage_counts(report, out_dir / "figures" / "stage_counts.png"),
    ]
    filt = report.get("filter")
    if filt:
        rows = [
            (s["name"], reason, n)
            for s in filt.get("per_stage", [])
            for reason, n in s.get("reasons", {}).items()
        ]
        written.append(_write_csv(out_dir / "filter_reasons.csv", ["stage", "reason", "count"], rows))
        written.append(plot_filter_drops(filt, out_dir / "figures" / "filter_drops.png"))
    if run_log:
        written.append(
            _write_csv(
                out_dir / "run_log.csv",
                ["epoch", "synthetic_fraction"],
                [(e["epoch"], f"{e['synthetic_fraction']:.6f}") for e in run_log],
            )
        )
        written.append(
            plot_synthetic_fraction(run_log, report.get("alpha", 0.0), out_dir / "figures" / "synthetic_fraction.png")
        )
    metrics = report.get("metrics")
    if metrics:
        keys = [k for k in ("fid", "diversity") if k in metrics]
        written.append(
            _write_csv(
                out_dir / "metrics.csv",
                ["dataset", "method", *keys],
                [(report["dataset"], report["method"], *[f"{metrics[k]:.6f}" for k in keys])],
            )
        )
    return written
