"""Aggregation of run diagnostics into tables, plot series, and figures.

Reports are CSV/JSON; the figures (error traces, residual histograms)
are rendered to PNG next to the delimited output so every number in a
report stays recomputable from the diagnostics it cites.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

DIAG_COLUMNS = ["epoch", "t", "est_x", "est_y", "est_z", "truth_x", "truth_y", "truth_z",
                "horizontal_error_m", "n_sats", "solve_ms", "noise_model", "failed"]


class ReportMergeError(ValueError):
    """Diagnostics from different scenarios cannot be merged."""


def write_diagnostics_csv(diagnostics: list[dict], noise_model: str, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(DIAG_COLUMNS)
        for d in diagnostics:
            writer.writerow([
                d["epoch"], format(d["t"], ".17g"),
                *(format(d.get(k, float("nan")), ".17g") for k in
                  ("est_x", "est_y", "est_z", "truth_x", "truth_y", "truth_z",
                   "horizontal_error_m")),
                d["n_sats"], format(d["solve_ms"], ".6g"), noise_model,
                d.get("failed") or "",
            ])


def read_diagnostics_csv(path) -> list[dict]:
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != DIAG_COLUMNS:
            raise ValueError(f"{path}: unexpected diagnostics columns {reader.fieldnames}")
        for row in reader:
            d = dict(row)
            for k in ("t", "est_x", "est_y", "est_z", "truth_x", "truth_y", "truth_z",
                      "horizontal_error_m", "solve_ms"):
                d[k] = float(d[k]) if d[k] not in ("", "nan") else float("nan")
            d["epoch"] = int(d["epoch"])
            d["n_sats"] = int(d["n_sats"])
            out.append(d)
    return out


def error_report(diagnostics: list[dict], sequences: dict[str, list[int]] | None = None) -> dict:
    """Per-sequence and total horizontal-error and runtime statistics."""
    ok = [d for d in diagnostics if not d.get("failed")]
    failed = [d for d in diagnostics if d.get("failed")]

    def stats(rows):
        errs = [d["horizontal_error_m"] for d in rows if np.isfinite(d.get("horizontal_error_m", np.nan))]
        times = [d["solve_ms"] for d in rows]
        return {
            "n_epochs": len(rows),
            "mean_error_m": float(np.mean(errs)) if errs else float("nan"),
            "std_error_m": float(np.std(errs)) if errs else float("nan"),
            "mean_solve_ms": float(np.mean(times)) if times else float("nan"),
            "std_solve_ms": float(np.std(times)) if times else float("nan"),
        }

    report = {"total": stats(ok), "n_failed_windows": len(failed),
              "failed_epochs": [d["epoch"] for d in failed]}
    if sequences:
        by_epoch = {d["epoch"]: d for d in ok}
        report["sequences"] = {
            name: stats([by_epoch[e] for e in idx if e in by_epoch])
            for name, idx in sequences.items()}
    return report


def comparison_table(runs: dict[str, list[dict]]) -> list[dict]:
    """One row per noise model, ranked by total mean error (rank 1 = best)."""
    epochs = None
    rows = []
    for name, diags in runs.items():
        keys = tuple(d["epoch"] for d in diags)
        if epochs is None:
            epochs = keys
        elif keys != epochs:
            raise ReportMergeError(
                f"run {name!r} covers different epochs than the first run; refusing to merge")
        rep = error_report(diags)
        rows.append({"noise_model": name, **rep["total"],
                     "n_failed_windows": rep["n_failed_windows"]})
    order = np.argsort([r["mean_error_m"] if np.isfinite(r["mean_error_m"]) else np.inf
                        for r in rows])
    for rank, i in enumerate(order, start=1):
        rows[i]["rank"] = rank
    return rows


def residual_histogram(diagnostics: list[dict], bins: int = 50):
    values = [v for d in diagnostics for v in d.get("residuals", {}).values()]
    counts, edges = np.histogram(values, bins=bins)
    return counts, edges


def write_comparison_csv(rows: list[dict], path) -> None:
    if not rows:
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)


def render_error_trace(runs: dict[str, list[dict]], path) -> None:
    fig, ax = plt.subplots(figsize=(8, 4))
    for name, diags in runs.items():
        t = [d["t"] for d in diags]
        e = [d.get("horizontal_error_m", float("nan")) for d in diags]
        ax.plot(t, e, label=name, linewidth=1.0)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("horizontal error [m]")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_residual_histogram(diagnostics: list[dict], path, bins: int = 50) -> None:
    values = [v for d in diagnostics for v in d.get("residuals", {}).values()]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(values, bins=bins)
    ax.set_xlabel("pseudorange residual [m]")
    ax.set_ylabel("count")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
