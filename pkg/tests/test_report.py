"""Report aggregation tests: stats, ranking, merging, figures, CSV I/O."""

import numpy as np
import pytest

from rangeloc import report
from rangeloc.report import (
    DIAG_COLUMNS,
    ReportMergeError,
    comparison_table,
    error_report,
    read_diagnostics_csv,
    residual_histogram,
    write_comparison_csv,
    write_diagnostics_csv,
)


def diag(epoch, err, t=None, solve_ms=2.0, failed=None, residuals=None):
    return {
        "epoch": epoch, "t": float(epoch) if t is None else t,
        "est_x": 1.0, "est_y": 2.0, "est_z": 3.0,
        "truth_x": 1.0, "truth_y": 2.0, "truth_z": 3.0,
        "horizontal_error_m": err, "n_sats": 8, "solve_ms": solve_ms,
        "failed": failed, "residuals": residuals or {},
    }


class TestErrorReport:
    def test_totals_match_hand_computation(self):
        diags = [diag(0, 1.0, solve_ms=2.0), diag(1, 3.0, solve_ms=4.0)]
        rep = error_report(diags)
        assert rep["total"]["n_epochs"] == 2
        assert rep["total"]["mean_error_m"] == pytest.approx(2.0)
        assert rep["total"]["std_error_m"] == pytest.approx(1.0)
        assert rep["total"]["mean_solve_ms"] == pytest.approx(3.0)
        assert rep["n_failed_windows"] == 0

    def test_failed_windows_counted_not_averaged(self):
        diags = [diag(0, 1.0), diag(1, 500.0, failed="diverged"), diag(2, 3.0)]
        rep = error_report(diags)
        assert rep["total"]["mean_error_m"] == pytest.approx(2.0)
        assert rep["n_failed_windows"] == 1
        assert rep["failed_epochs"] == [1]

    def test_per_sequence_split(self):
        diags = [diag(i, float(i)) for i in range(10)]
        rep = error_report(diags, {"a": [0, 1, 2], "b": [5, 6, 7, 8]})
        assert rep["sequences"]["a"]["mean_error_m"] == pytest.approx(1.0)
        assert rep["sequences"]["b"]["mean_error_m"] == pytest.approx(6.5)
        assert rep["sequences"]["a"]["n_epochs"] == 3


class TestComparisonTable:
    def test_rank_orders_by_mean_error(self):
        runs = {
            "worse": [diag(0, 5.0), diag(1, 7.0)],
            "best": [diag(0, 1.0), diag(1, 1.5)],
            "mid": [diag(0, 2.0), diag(1, 4.0)],
        }
        rows = comparison_table(runs)
        by_name = {r["noise_model"]: r["rank"] for r in rows}
        assert by_name == {"best": 1, "mid": 2, "worse": 3}

    def test_mismatched_epochs_refused(self):
        runs = {"a": [diag(0, 1.0), diag(1, 1.0)], "b": [diag(0, 1.0)]}
        with pytest.raises(ReportMergeError, match="refusing"):
            comparison_table(runs)

    def test_diverged_run_ranks_last(self):
        runs = {
            "allfail": [diag(0, np.nan, failed="diverged")],
            "fine": [diag(0, 1.0)],
        }
        rows = comparison_table(runs)
        by_name = {r["noise_model"]: r["rank"] for r in rows}
        assert by_name["fine"] == 1
        assert by_name["allfail"] == 2


class TestHistogram:
    def test_counts_conserve_total(self):
        rng = np.random.default_rng(0)
        diags = [diag(i, 1.0, residuals={f"G{j:02d}": float(rng.normal())
                                         for j in range(6)})
                 for i in range(20)]
        counts, edges = residual_histogram(diags, bins=30)
        assert counts.sum() == 20 * 6
        assert len(edges) == 31


class TestDiagnosticsCsv:
    def test_round_trip(self, tmp_path):
        diags = [diag(0, 1.25), diag(1, 2.5, failed="diverged: cost")]
        path = tmp_path / "d.csv"
        write_diagnostics_csv(diags, "gaussian", path)
        back = read_diagnostics_csv(path)
        assert [d["epoch"] for d in back] == [0, 1]
        assert back[0]["horizontal_error_m"] == 1.25
        assert back[0]["noise_model"] == "gaussian"
        assert back[0]["failed"] == ""
        assert back[1]["failed"] == "diverged: cost"

    def test_unexpected_columns_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("epoch,err\n0,1.0\n")
        with pytest.raises(ValueError, match="columns"):
            read_diagnostics_csv(path)

    def test_header_matches_declared_schema(self, tmp_path):
        path = tmp_path / "d.csv"
        write_diagnostics_csv([diag(0, 1.0)], "m", path)
        header = path.read_text().splitlines()[0]
        assert header.split(",") == DIAG_COLUMNS


class TestComparisonCsv:
    def test_written_rows_parse_back(self, tmp_path):
        rows = comparison_table({"a": [diag(0, 1.0)], "b": [diag(0, 2.0)]})
        path = tmp_path / "cmp.csv"
        write_comparison_csv(rows, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 3
        assert "noise_model" in lines[0] and "rank" in lines[0]


class TestFigures:
    def test_error_trace_png(self, tmp_path):
        runs = {"a": [diag(i, 1.0 + i) for i in range(5)]}
        path = tmp_path / "trace.png"
        report.render_error_trace(runs, path)
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_residual_histogram_png(self, tmp_path):
        diags = [diag(0, 1.0, residuals={"G01": 0.5, "G02": -1.0})]
        path = tmp_path / "hist.png"
        report.render_residual_histogram(diags, path)
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
