"""Command-line evaluation harness.

Pipelines: ``simulate`` a scenario, ``estimate`` a trajectory under a
chosen noise model, ``fit-gmm`` mixtures from a residuals CSV,
``train-nlos`` the feature classifier, ``report`` comparisons with
figures, and ``sweep-kernels`` for the kernel-by-efficiency grid.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 run
completed with diverged windows, 5 internal error.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import estimator, kernels, nlos, report, simkit, vb_gmm

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
EXIT_INTERNAL = 5

NOISE_MODELS = ["gaussian", "m-estimator", "gmm", "mh-gmm", "mh-gmm-ms"]
KERNEL_CHOICES = [f.value for f in kernels.KernelFamily if f is not kernels.KernelFamily.L2]


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


class DataError(click.ClickException):
    exit_code = EXIT_DATA


def _load_json(path, kind: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError as exc:
        raise DataError(f"{kind} file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{kind} file {path} is not valid JSON: {exc}") from exc


def _scenario_from_config(path, seed_override=None) -> simkit.ScenarioConfig:
    raw = _load_json(path, "scenario config")
    if seed_override is not None:
        raw["seed"] = seed_override
    try:
        return simkit.ScenarioConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario config {path}: {exc}") from exc


def _read_dataset(path) -> simkit.EpochDataset:
    try:
        return simkit.read_dataset(path)
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {path}") from exc
    except simkit.DatasetFormatError as exc:
        raise DataError(f"bad dataset {path}: {exc}") from exc


def _build_noise_model(name, kernel, efficiency, sigma):
    """Returns (noise_model, model_bank_or_None)."""
    if name == "gaussian":
        return estimator.GaussianNoise(sigma), None
    if name == "m-estimator":
        cfg = kernels.KernelConfig.from_efficiency(kernels.KernelFamily(kernel), efficiency)
        return estimator.MEstimatorNoise(cfg, sigma), None
    if name == "gmm":
        return estimator.GmmDominantNoise({}, sigma), vb_gmm.NoiseModelBank()
    if name in ("mh-gmm", "mh-gmm-ms"):
        nm = estimator.MhGmmNoise(sigma, shift_enabled=(name == "mh-gmm-ms"),
                                  efficiency=efficiency)
        return nm, vb_gmm.NoiseModelBank()
    raise ConfigError(f"unknown noise model {name!r}; choose from {NOISE_MODELS}")


def _solver_config(overrides: dict | None) -> estimator.SolverConfig:
    overrides = overrides or {}
    known = set(estimator.SolverConfig.__dataclass_fields__)
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown solver config fields: {sorted(unknown)}")
    try:
        return estimator.SolverConfig(**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver config: {exc}") from exc


def _sequence_table(raw) -> list[tuple[str, float, float]]:
    try:
        return [(r["name"], float(r["start_s"]), float(r["end_s"])) for r in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid sequence table: {exc}") from exc


@click.group()
def main():
    """Robust range-based localization toolkit."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="scenario JSON")
@click.option("--out", "out_path", required=True, type=click.Path(), help="dataset output file")
@click.option("--seed", type=int, default=None, help="override the scenario seed")
def simulate(config_path, out_path, seed):
    """Generate a synthetic dataset and print its statistics row."""
    cfg = _scenario_from_config(config_path, seed)
    ds = simkit.generate(cfg)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    simkit.write_dataset(ds, out_path)
    stats = simkit.dataset_stats(ds)
    click.echo("n_avg_sat,n_max_sat,n_min_sat,sigma_max_rho_m,r_los_pct,r_nlos_pct")
    click.echo(",".join(format(stats[k], ".4f") if isinstance(stats[k], float) else str(stats[k])
                        for k in ("n_avg_sat", "n_max_sat", "n_min_sat",
                                  "sigma_max_rho_m", "r_los_pct", "r_nlos_pct")))


def _run_estimate(ds, solver_cfg, noise_name, kernel, efficiency, sigma):
    nm, bank = _build_noise_model(noise_name, kernel, efficiency, sigma)
    try:
        return estimator.run_sequence(ds, solver_cfg, nm, model_bank=bank)
    except (ValueError,) as exc:
        raise DataError(str(exc)) from exc


def _write_estimate_outputs(diags, noise_label, out_dir, sequences=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    diag_path = out_dir / f"diagnostics_{noise_label}.csv"
    report.write_diagnostics_csv(diags, noise_label, diag_path)
    with open(out_dir / f"residuals_{noise_label}.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sat_id", "epoch", "value", "predicted_range"])
        for d in diags:
            for sat_id, value in d.get("residuals", {}).items():
                writer.writerow([sat_id, d["epoch"], format(value, ".17g"), ""])
    rep = report.error_report(diags, sequences)
    report.write_json(rep, out_dir / f"report_{noise_label}.json")
    report.write_comparison_csv(
        [{"noise_model": noise_label, **rep["total"], "n_failed_windows": rep["n_failed_windows"]}],
        out_dir / f"report_{noise_label}.csv")
    return diag_path, rep


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="run config JSON (dataset, noise model, solver, sequences)")
@click.option("--dataset", "dataset_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--noise-model", type=click.Choice(NOISE_MODELS), default="gaussian")
@click.option("--kernel", type=click.Choice(KERNEL_CHOICES), default="cauchy")
@click.option("--efficiency", type=click.Choice(["0.80", "0.85", "0.90", "0.95"]), default="0.90")
@click.option("--sigma", type=float, default=1.0, help="pseudorange noise sigma, m")
@click.option("--deterministic", is_flag=True, default=False,
              help="sequential deterministic mode (always on; accepted for config parity)")
def estimate(config_path, dataset_path, out_dir, noise_model, kernel, efficiency, sigma,
             deterministic):
    """Run the sliding-window estimator and emit diagnostics + error report."""
    solver_overrides = None
    sequences_raw = None
    if config_path:
        run_cfg = _load_json(config_path, "run config")
        dataset_path = dataset_path or run_cfg.get("dataset")
        noise_model = run_cfg.get("noise_model", noise_model)
        kernel = run_cfg.get("kernel", kernel)
        efficiency = run_cfg.get("efficiency", efficiency)
        sigma = run_cfg.get("sigma", sigma)
        solver_overrides = run_cfg.get("solver")
        sequences_raw = run_cfg.get("sequences")
    if not dataset_path:
        raise ConfigError("either --dataset or a config with a 'dataset' entry is required")
    ds = _read_dataset(dataset_path)
    solver_cfg = _solver_config(solver_overrides)
    sequences = None
    if sequences_raw:
        try:
            sequences = simkit.split_sequences(ds, _sequence_table(sequences_raw))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    diags = _run_estimate(ds, solver_cfg, noise_model, kernel, float(efficiency), sigma)
    label = noise_model if noise_model != "m-estimator" else f"{kernel}-{efficiency}"
    _, rep = _write_estimate_outputs(diags, label, out_dir, sequences)
    click.echo(json.dumps({"noise_model": label, **rep["total"],
                           "n_failed_windows": rep["n_failed_windows"]}))
    if rep["n_failed_windows"] > 0:
        sys.exit(EXIT_DIVERGENCE)


@main.command("fit-gmm")
@click.option("--residuals", "residuals_path", required=True, type=click.Path(),
              help="CSV with sat_id,epoch,value,predicted_range")
@click.option("--out", "out_path", required=True, type=click.Path(), help="models JSON")
@click.option("--seed", type=int, default=0)
def fit_gmm(residuals_path, out_path, seed):
    """Fit per-satellite residual mixtures from a residuals CSV."""
    by_sat: dict[str, list[vb_gmm.ResidualSample]] = {}
    try:
        with open(residuals_path, newline="") as f:
            reader = csv.DictReader(f)
            expected = ["sat_id", "epoch", "value", "predicted_range"]
            if reader.fieldnames != expected:
                raise DataError(f"residuals CSV must have columns {expected}, "
                                f"got {reader.fieldnames}")
            for row in reader:
                s = vb_gmm.ResidualSample(row["sat_id"], int(row["epoch"]), float(row["value"]),
                                          float(row["predicted_range"] or 0.0))
                by_sat.setdefault(s.sat_id, []).append(s)
    except FileNotFoundError as exc:
        raise DataError(f"residuals file not found: {residuals_path}") from exc
    except ValueError as exc:
        raise DataError(f"bad residuals CSV: {exc}") from exc
    if not by_sat:
        raise DataError("residuals CSV contains no rows")
    models = {}
    for sat_id in sorted(by_sat):
        model = vb_gmm.fit_vb_gmm(by_sat[sat_id], seed=vb_gmm._snapshot_seed(seed, sat_id))
        models[sat_id] = model.to_dict()
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    report.write_json(models, out_path)
    click.echo(f"fitted {len(models)} satellite models -> {out_path}")


@main.command("train-nlos")
@click.option("--features", "features_path", type=click.Path(), default=None,
              help="labeled feature CSV")
@click.option("--dataset", "dataset_path", type=click.Path(), default=None,
              help="extract features from a dataset file instead")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--rebalance", "strategy", type=click.Choice(["none", "undersample-majority"]),
              default="none")
@click.option("--seed", type=int, default=0)
@click.option("--holdout", type=float, default=0.25, help="held-out fraction for metrics")
def train_nlos(features_path, dataset_path, out_dir, strategy, seed, holdout):
    """Train the LOS/NLOS classifier and write model + metrics report."""
    if (features_path is None) == (dataset_path is None):
        raise ConfigError("exactly one of --features or --dataset is required")
    if features_path:
        rows = []
        try:
            with open(features_path, newline="") as f:
                reader = csv.DictReader(f)
                needed = set(nlos.FEATURE_NAMES) | {"label"}
                if not needed.issubset(reader.fieldnames or []):
                    raise DataError(f"feature CSV must contain columns {sorted(needed)}")
                for row in reader:
                    rows.append({**{k: float(row[k]) for k in nlos.FEATURE_NAMES},
                                 "label": row["label"],
                                 "pseudorange_error_m": float(row["pseudorange_error_m"])
                                 if row.get("pseudorange_error_m") else None})
        except FileNotFoundError as exc:
            raise DataError(f"features file not found: {features_path}") from exc
        except ValueError as exc:
            raise DataError(f"bad feature CSV: {exc}") from exc
    else:
        rows = nlos.extract_features(_read_dataset(dataset_path))
    samples = nlos.rows_to_samples(rows)
    if not samples:
        raise DataError("no usable samples (all rows had missing features)")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(samples))
    n_hold = max(1, int(holdout * len(samples)))
    test = [samples[i] for i in idx[:n_hold]]
    train = [samples[i] for i in idx[n_hold:]]
    train = nlos.rebalance(train, strategy, seed=seed)
    try:
        model = nlos.train_classifier(train)
    except nlos.DegenerateTrainingError as exc:
        raise DataError(str(exc)) from exc
    metrics = nlos.evaluate(model, test)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(model.to_dict(), out / "nlos_model.json")
    report.write_json(metrics.to_dict(), out / "nlos_metrics.json")
    with open(out / "nlos_metrics.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "precision", "recall", "f1", "accuracy"])
        for cls in ("LOS", "NLOS"):
            m = metrics.per_class[cls]
            writer.writerow([cls, f"{m['precision']:.4f}", f"{m['recall']:.4f}",
                             f"{m['f1']:.4f}", f"{metrics.accuracy:.4f}"])
    click.echo(json.dumps({"accuracy": metrics.accuracy,
                           "nlos_recall": metrics.per_class["NLOS"]["recall"]}))


@main.command("report")
@click.argument("diagnostics", nargs=-1, required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
def report_cmd(diagnostics, out_dir):
    """Merge diagnostics CSVs into a ranked comparison with figures."""
    runs = {}
    for path in diagnostics:
        try:
            diags = report.read_diagnostics_csv(path)
        except FileNotFoundError as exc:
            raise DataError(f"diagnostics not found: {path}") from exc
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        name = diags[0]["noise_model"] if diags else Path(path).stem
        runs[name] = diags
        res_path = Path(path).with_name(Path(path).name.replace("diagnostics_", "residuals_"))
        if res_path.exists():
            by_epoch = {d["epoch"]: {} for d in diags}
            with open(res_path, newline="") as f:
                for row in csv.DictReader(f):
                    by_epoch.setdefault(int(row["epoch"]), {})[row["sat_id"]] = float(row["value"])
            for d in diags:
                d["residuals"] = by_epoch.get(d["epoch"], {})
    try:
        rows = report.comparison_table(runs)
    except report.ReportMergeError as exc:
        raise DataError(str(exc)) from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_comparison_csv(rows, out / "comparison.csv")
    report.write_json(rows, out / "comparison.json")
    report.render_error_trace(runs, out / "error_trace.png")
    for name, diags in runs.items():
        if any(d.get("residuals") for d in diags):
            counts, edges = report.residual_histogram(diags)
            with open(out / f"residual_hist_{name}.csv", "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["bin_left", "bin_right", "count"])
                for i, c in enumerate(counts):
                    writer.writerow([edges[i], edges[i + 1], c])
            report.render_residual_histogram(diags, out / f"residual_hist_{name}.png")
    click.echo(f"wrote comparison for {len(runs)} runs -> {out}")


@main.command("sweep-kernels")
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="optional run config (solver, sequences, kernel/efficiency lists)")
@click.option("--sigma", type=float, default=1.0)
@click.option("--deterministic", is_flag=True, default=False)
def sweep_kernels(dataset_path, out_dir, config_path, sigma, deterministic):
    """Kernel-by-efficiency grid plus the L2 baseline."""
    ds = _read_dataset(dataset_path)
    solver_overrides = None
    families = KERNEL_CHOICES
    efficiencies = [0.95, 0.90, 0.85, 0.80]
    sequences = None
    if config_path:
        run_cfg = _load_json(config_path, "run config")
        solver_overrides = run_cfg.get("solver")
        families = run_cfg.get("kernels", families)
        efficiencies = [float(e) for e in run_cfg.get("efficiencies", efficiencies)]
        if run_cfg.get("sequences"):
            try:
                sequences = simkit.split_sequences(ds, _sequence_table(run_cfg["sequences"]))
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
    solver_cfg = _solver_config(solver_overrides)

    rows = []
    any_failed = False

    def add_row(kernel_name, eff_label, diags):
        nonlocal any_failed
        rep = report.error_report(diags, sequences)
        row = {"kernel": kernel_name, "efficiency": eff_label,
               **{f"total_{k}": v for k, v in rep["total"].items()},
               "n_failed_windows": rep["n_failed_windows"]}
        if sequences:
            for name in sequences:
                row[f"{name}_mean_error_m"] = rep["sequences"][name]["mean_error_m"]
        any_failed = any_failed or rep["n_failed_windows"] > 0
        rows.append(row)

    diags = _run_estimate(ds, solver_cfg, "gaussian", None, None, sigma)
    add_row("l2", "-", diags)
    for fam in families:
        for eff in efficiencies:
            try:
                diags = _run_estimate(ds, solver_cfg, "m-estimator", fam, eff, sigma)
                add_row(fam, f"{eff:.2f}", diags)
            except DataError:
                rows.append({"kernel": fam, "efficiency": f"{eff:.2f}",
                             "total_mean_error_m": float("nan"), "n_failed_windows": -1})
                any_failed = True
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_comparison_csv(rows, out / "kernel_sweep.csv")
    report.write_json(rows, out / "kernel_sweep.json")
    click.echo(f"swept {len(rows)} cells -> {out / 'kernel_sweep.csv'}")
    if any_failed:
        sys.exit(EXIT_DIVERGENCE)


def entry():  # pragma: no cover
    try:
        main(standalone_mode=True)
    except Exception as exc:  # unexpected: internal error code
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)


if __name__ == "__main__":  # pragma: no cover
    entry()
