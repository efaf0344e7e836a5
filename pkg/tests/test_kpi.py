import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from ltmsim.config import load_scenario
from ltmsim.handover import KPI_NAMES
from ltmsim.kpi import CSV_COLUMNS, KpiReport, lower_with_ci, mean_ci95, replay_run, write_run


def test_mean_ci95_matches_textbook_t_interval():
    v = [1.0, 2.0, 4.0, 7.0]
    m, lo, hi = mean_ci95(v)
    half = 3.182446305284263 * np.std(v, ddof=1) / 2.0  # t_{0.975, 3}
    assert m == pytest.approx(3.5)
    assert (lo, hi) == pytest.approx((3.5 - half, 3.5 + half))
    assert mean_ci95([2.5]) == (2.5, 2.5, 2.5)
    with pytest.raises(ValueError):
        mean_ci95([])


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=20))
def test_interval_contains_mean(values):
    m, lo, hi = mean_ci95(values)
    assert lo <= m + 1e-9 * max(1.0, abs(m)) and m <= hi + 1e-9 * max(1.0, abs(m))


def test_t_quantile_oracle():
    assert stats.t.ppf(0.975, 9) == pytest.approx(2.2621571627409915)


def synthetic_report():
    rng = np.random.default_rng(0)
    values = {(c, k): list(rng.normal(c, 0.1, size=5)) for c in range(1, 9) for k in KPI_NAMES}
    return KpiReport.from_values(values, "abc123")


def test_report_has_one_row_per_configuration_and_kpi():
    r = synthetic_report()
    assert len(r.rows) == 64
    assert r.configurations == list(range(1, 9))
    assert [row.kpi for row in r.rows[:8]] == list(KPI_NAMES)
    assert r.config_hash == "abc123"
    with pytest.raises(KeyError):
        r.row(9, "ho_per_min")


def test_csv_and_json_round_trip(tmp_path):
    r = synthetic_report()
    r.to_csv(tmp_path / "r.csv")
    r.to_json(tmp_path / "r.json")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    assert KpiReport.from_csv(tmp_path / "r.csv") == r
    assert KpiReport.from_json(tmp_path / "r.json") == r


def test_bad_csv_header_rejected(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        KpiReport.from_csv(tmp_path / "x.csv")


def test_lower_with_ci():
    r = synthetic_report()
    assert lower_with_ci(r, 1, 2, "ho_per_min")
    assert not lower_with_ci(r, 2, 1, "ho_per_min")
    assert not lower_with_ci(r, 3, 3, "ho_per_min")


def test_write_and_replay_run(tmp_path, small_result):
    report = write_run(small_result, tmp_path)
    for name in ("report.csv", "report.json", "replicates.csv", "scenario.yaml", "runs.json"):
        assert (tmp_path / name).exists()
    assert len(list((tmp_path / "events").glob("*.ndjson"))) == 2 * 8
    assert load_scenario(tmp_path / "scenario.yaml").config_hash() == report.config_hash
    replayed = replay_run(tmp_path)
    assert replayed == report
    for key, vals in report.replicates.items():
        assert replayed.replicates[key] == vals


def test_replay_rejects_edited_scenario(tmp_path, small_result):
    write_run(small_result, tmp_path)
    text = (tmp_path / "scenario.yaml").read_text().replace("n_ues: 6", "n_ues: 7")
    (tmp_path / "scenario.yaml").write_text(text)
    with pytest.raises(ValueError):
        replay_run(tmp_path)


def test_rates_are_finite_in_report(small_result):
    r = KpiReport.from_scenario(small_result)
    assert all(math.isfinite(row.mean) for row in r.rows)
    assert all(row.n_replicates == 2 for row in r.rows)
