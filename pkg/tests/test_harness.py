import csv
import math

import numpy as np
import pytest

from side_fd.benchmark import BenchmarkParams, exact_on_grid
from side_fd.exceptions import CflViolationError, InvalidParamsError, StudyIoError
from side_fd.grid import Grid
from side_fd.harness import (
    ERROR_COLUMNS,
    SLOPE_COLUMNS,
    ErrorReport,
    StudyConfig,
    TauRule,
    emit,
    fit_report_slopes,
    fit_slope,
    format_float,
    parse_spacing,
    read_error_rows,
    run_study,
)
from side_fd.noise import simulate_path
from side_fd.schemes import SchemeKind

SMALL = dict(h_list=(2.0**-2, 2.0**-3), replications=3, base_seed=5)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------- slope fits ----------


def test_fit_slope_recovers_exact_power_law():
    h = [2.0**-2, 2.0**-3, 2.0**-4, 2.0**-5]
    fit = fit_slope(h, [3 * x for x in h], scheme="imex", norm="sup")
    assert fit.slope == pytest.approx(1.0, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log2(3), abs=1e-12)
    assert fit.ci_high - fit.ci_low == pytest.approx(0.0, abs=1e-9)
    assert fit.points == 4


def test_fit_slope_with_few_points():
    two = fit_slope([0.5, 0.25], [0.2, 0.1])
    assert two.slope == pytest.approx(1.0)
    assert math.isnan(two.ci_low) and math.isnan(two.ci_high)
    one = fit_slope([0.5, 0.25], [0.2, float("nan")])
    assert one.points == 1 and math.isnan(one.slope)


def test_float_format_is_lossless(rng):
    for value in rng.standard_normal(200) * 10.0 ** rng.integers(-12, 12, 200):
        assert float(format_float(value)) == value


# ---------- options ----------


def test_tau_rule_and_spacings():
    assert TauRule.parse("h2").taus_for([0.5, 0.25]) == (0.25, 0.0625)
    rule = TauRule.parse("list:2^-4, 0.01")
    assert rule.taus == (0.0625, 0.01)
    assert str(rule) == "list:0.0625,0.01"
    with pytest.raises(InvalidParamsError):
        rule.taus_for([0.5])
    with pytest.raises(InvalidParamsError):
        TauRule.parse("cubic")
    assert parse_spacing("2**-3") == 0.125
    assert parse_spacing(" 0.5 ") == 0.5


def test_study_config_validation():
    cfg = StudyConfig(h_list=(2.0**-4, 2.0**-2, 2.0**-3))
    assert cfg.h_list == (0.25, 0.125, 0.0625)
    assert cfg.tau_fine == 2.0**-8
    with pytest.raises(InvalidParamsError):
        StudyConfig(h_list=(0.25, 0.25))
    with pytest.raises(InvalidParamsError):
        StudyConfig(replications=0)
    with pytest.raises(InvalidParamsError):
        StudyConfig(threads=0)


# ---------- study runs ----------


def test_empty_study_writes_headers_only(tmp_path):
    report = run_study(StudyConfig(schemes=()))
    assert report.rows == [] and report.slopes == []
    assert "varsigma1" in report.constants
    written = emit(report, tmp_path / "out")
    assert read_rows(written[0]) == [ERROR_COLUMNS]
    assert read_rows(written[1]) == [SLOPE_COLUMNS]
    assert written[2].exists()


def test_small_study(tmp_path):
    report = run_study(StudyConfig(**SMALL))
    assert len(report.rows) == 4
    for row in report.rows:
        assert row.M == 3 and row.failures == 0
        assert row.tau == row.h**2
        assert 0 < row.mean_sq_l2 and 0 < row.mean_sq_sup < 1
        assert row.active_small_cells == 1
    assert [r.h for r in report.rows_for(SchemeKind.IMEX)] == [0.25, 0.125]
    assert {(s.scheme, s.norm) for s in report.slopes} == {
        ("explicit", "sup"),
        ("explicit", "l2"),
        ("imex", "sup"),
        ("imex", "l2"),
    }

    written = emit(report, tmp_path)
    assert read_error_rows(written[0]) == report.rows
    assert written[2].read_text().lstrip().startswith("<?xml")
    slopes = read_rows(written[1])[1:]
    for record, fit in zip(slopes, fit_report_slopes(read_error_rows(written[0]))):
        assert record[:2] == [fit.scheme, fit.norm]
        assert float(record[2]) == pytest.approx(fit.slope, abs=1e-12)


def test_thread_count_does_not_change_results(tmp_path):
    outputs = []
    for threads in (1, 3):
        report = run_study(StudyConfig(threads=threads, **SMALL))
        outputs.append(emit(report, tmp_path / f"t{threads}")[0].read_bytes())
    assert outputs[0] == outputs[1]


def test_cfl_violation_is_raised_before_running():
    cfg = StudyConfig(h_list=(0.25,), tau_rule=TauRule((0.125,)), schemes=("explicit",))
    with pytest.raises(CflViolationError):
        run_study(cfg)
    # the implicit scheme has no such restriction
    report = run_study(StudyConfig(h_list=(0.25,), tau_rule=TauRule((0.125,)), schemes=("imex",), replications=1))
    assert report.rows[0].failures == 0


def test_steps_must_nest_in_the_finest_step():
    cfg = StudyConfig(h_list=(0.25, 0.125), tau_rule=TauRule.parse("list:0.0625,0.025"), schemes=("imex",))
    with pytest.raises(InvalidParamsError):
        run_study(cfg)


def test_resolutions_share_one_noise_path():
    p = BenchmarkParams()
    path = simulate_path(p.measure, p.T, 2.0**-6, eps=p.eps, seed=5, stream=1)
    coarse = exact_on_grid(p, Grid(h=0.25), path, 2.0**-4)
    fine = exact_on_grid(p, Grid(h=0.125), path, 2.0**-6)
    # node 0 and every coarse time level are shared
    for n in range(coarse.shape[0]):
        assert coarse[n, Grid(h=0.25).position(0)] == pytest.approx(
            fine[4 * n, Grid(h=0.125).position(0)], rel=1e-14
        )


def test_emit_reports_io_failures(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(StudyIoError):
        emit(ErrorReport(), blocker)


# ---------- full-size acceptance runs ----------


@pytest.mark.slow
def test_strong_error_is_first_order_in_h(tmp_path):
    cfg = StudyConfig(h_list=tuple(2.0**-k for k in range(2, 6)), replications=200, base_seed=20240601, threads=4)
    report = run_study(cfg)
    for fit in report.slopes:
        if fit.norm == "sup":
            assert 0.7 <= fit.slope <= 1.3, fit
    for scheme in cfg.schemes:
        rows = report.rows_for(scheme)
        for coarse, fine in zip(rows, rows[1:]):
            rms_coarse, rms_fine = math.sqrt(coarse.mean_sq_sup), math.sqrt(fine.mean_sq_sup)
            # standard error of the RMS from that of the mean square
            se = coarse.se_sup / (2 * rms_coarse) + fine.se_sup / (2 * rms_fine)
            assert rms_fine <= rms_coarse + 2 * se

    single = run_study(StudyConfig(h_list=cfg.h_list, replications=200, base_seed=20240601, threads=1))
    a = emit(report, tmp_path / "four")[0].read_bytes()
    b = emit(single, tmp_path / "one")[0].read_bytes()
    assert a == b
    assert np.isfinite([r.mean_sq_sup for r in report.rows]).all()
