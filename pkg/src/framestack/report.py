"""Sweep result tables (CSV + markdown) and companion figures."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


@dataclass
class SweepRow:
    fs: int
    fr: int
    error_rate: float
    rtf: float
    num_forward_passes_total: int
    train_wall_seconds: float | None = None


CSV_FIELDS = ["fs", "fr", "error_rate", "rtf", "num_forward_passes_total",
              "train_wall_seconds"]


def write_csv(rows: list[SweepRow], path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({
                "fs": r.fs,
                "fr": r.fr,
                "error_rate": repr(r.error_rate),
                "rtf": repr(r.rtf),
                "num_forward_passes_total": r.num_forward_passes_total,
                "train_wall_seconds": "" if r.train_wall_seconds is None
                else repr(r.train_wall_seconds),
            })


def read_csv(path) -> list[SweepRow]:
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            rows.append(SweepRow(
                fs=int(rec["fs"]),
                fr=int(rec["fr"]),
                error_rate=float(rec["error_rate"]),
                rtf=float(rec["rtf"]),
                num_forward_passes_total=int(
                    rec["num_forward_passes_total"]),
                train_wall_seconds=(float(rec["train_wall_seconds"])
                                    if rec["train_wall_seconds"] else None),
            ))
    return rows


def write_markdown(rows: list[SweepRow], path):
    lines = ["| FS | FR | error rate | RTF | forward passes |",
             "|---:|---:|-----------:|----:|---------------:|"]
    for r in rows:
        lines.append(f"| {r.fs} | {r.fr} | {r.error_rate:.4f} "
                     f"| {r.rtf:.4f} | {r.num_forward_passes_total} |")
    Path(path).write_text("\n".join(lines) + "\n")


def render_figures(rows: list[SweepRow], out_dir) -> list[Path]:
    """Error-rate and RTF charts for a sweep, written as PNGs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = [f"{r.fs}/{r.fr}" for r in rows]
    x = range(len(rows))
    written = []

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(x, [r.error_rate for r in rows], color="#4878a8")
    ax.set_xticks(list(x), labels)
    ax.set_xlabel("FS / FR")
    ax.set_ylabel("token error rate")
    ax.set_title("Error rate by stacking / retaining setting")
    fig.tight_layout()
    path = out_dir / "sweep_error_rate.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(list(x), [r.rtf for r in rows], "o-", color="#a85448")
    ax.set_xticks(list(x), labels)
    ax.set_xlabel("FS / FR")
    ax.set_ylabel("real time factor")
    ax.set_title("Decoding RTF by stacking / retaining setting")
    fig.tight_layout()
    path = out_dir / "sweep_rtf.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)
    return written
