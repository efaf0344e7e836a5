import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltmsim.config import HoConfig
from ltmsim.handover import (
    HO, HOF, KPI_NAMES, PP, PREP, RELEASE, RLF, ContractViolation, HoEvent, SessionBatch, audit_events,
    read_event_log, session_kpis, write_event_log,
)

CFG = HoConfig()
TICK = 10.0


def drive(metric_fn, n_ticks, n_sectors=2, sinr_fn=None, rsrp_fn=None, cfg=CFG):
    """Single-session run; metric_fn(tick) -> (S,) dBm."""
    b = SessionBatch(1, n_sectors, cfg, TICK, n_ticks)
    for t in range(n_ticks):
        m = np.asarray(metric_fn(t), dtype=float)[None, :]
        rsrp = m if rsrp_fn is None else np.asarray(rsrp_fn(t), dtype=float)[None, :]
        sinr = np.full((1, n_sectors), 10.0) if sinr_fn is None else np.asarray(sinr_fn(t), dtype=float)[None, :]
        b.step(t, m, rsrp, sinr)
    return b


def kinds(b, kind):
    return [ev for ev in b.events if ev.kind == kind]


def step_up(delta):
    return lambda t: [-80.0, -90.0] if t < 5 else [-80.0, -80.0 + delta]


def test_a3_below_offset_never_hands_over():
    assert kinds(drive(step_up(2.0), 300), HO) == []


def test_a3_above_offset_hands_over_after_delay_and_ttt():
    b = drive(step_up(4.0), 300)
    hos = kinds(b, HO)
    assert len(hos) == 1
    # condition seen from tick 5 + 2 (reporting/decision delay), fires on the 10th TTT tick
    assert hos[0].tick == 5 + 2 + 10 - 1
    assert (hos[0].source, hos[0].target) == (0, 1)
    assert b.serving[0] == 1
    assert audit_events(b.events) == []


def test_short_excursion_resets_ttt():
    # 5 ticks above offset, then back: TTT never completes
    fn = lambda t: [-80.0, -75.0] if 20 <= t < 25 else [-80.0, -90.0]  # noqa: E731
    assert kinds(drive(fn, 200), HO) == []


def test_at_most_n_prepared_cells():
    fn = lambda t: [-60.0, -70.0, -71.0, -72.0, -73.0, -74.0]  # noqa: E731
    b = drive(fn, 50, n_sectors=6)
    assert b.max_prepared_seen == 4
    assert b.prepared[0].tolist() == [False, True, True, True, True, False]
    assert audit_events(b.events) == []


def test_undetectable_cells_are_not_prepared():
    b = drive(lambda t: [-60.0, -96.0], 20)
    assert kinds(b, PREP) == []


def ping_pong(back_after_ticks):
    def fn(t):
        if t < 5:
            return [-80.0, -90.0]
        if t < 5 + back_after_ticks:
            return [-80.0, -70.0]
        return [-70.0, -80.0]
    return drive(fn, 5 + back_after_ticks + 200)


def test_pp_within_window():
    b = ping_pong(90)
    hos = kinds(b, HO)
    assert len(hos) == 2 and hos[1].tick - hos[0].tick == 90
    pps = kinds(b, PP)
    assert len(pps) == 1 and pps[0].tick == hos[1].tick
    assert audit_events(b.events) == []


def test_no_pp_after_window():
    b = ping_pong(150)
    assert len(kinds(b, HO)) == 2
    assert kinds(b, PP) == []


def test_hof_when_target_below_sensitivity_at_execution():
    rsrp = lambda t: [-80.0, -96.0] if t >= 10 else [-80.0, -90.0]  # noqa: E731
    b = drive(step_up(4.0), 300, rsrp_fn=rsrp)
    hofs = kinds(b, HOF)
    assert hofs and hofs[0].tick == 16
    assert kinds(b, HO) == []
    # preparations are dropped and service resumes after the recovery time
    assert b.prepared[0].sum() <= CFG.n_prepared
    assert audit_events(b.events) == []


def test_unprepared_target_is_a_contract_violation():
    b = SessionBatch(1, 3, CFG, TICK, 10)
    b.attach(np.array([[-70.0, -80.0, -90.0]]))
    with pytest.raises(ContractViolation):
        b.execute_ho(0, np.array([0]), np.array([2]), np.zeros((1, 3)), np.zeros((1, 3)))


def sinr_run(values):
    vals = list(values)
    return drive(lambda t: [-70.0, -90.0], len(vals),
                 sinr_fn=lambda t: [vals[t], -20.0])


def test_rlf_on_the_n310th_out_of_sync_tick():
    b = sinr_run([0.0] * 3 + [-9.0] * 6 + [0.0] * 3)
    rlfs = kinds(b, RLF)
    assert len(rlfs) == 1 and rlfs[0].tick == 3 + 5


def test_in_sync_resets_counter_but_grey_zone_holds_it():
    assert kinds(sinr_run([-9.0] * 5 + [-5.0] + [-9.0] * 5 + [0.0]), RLF) == []
    assert len(kinds(sinr_run([-9.0] * 5 + [-7.0] + [-9.0] + [0.0]), RLF)) == 1


def test_thresholds_are_strict():
    # exactly Qout is not out-of-sync; exactly Qin does not reset
    assert kinds(sinr_run([-8.0] * 10), RLF) == []
    assert len(kinds(sinr_run([-9.0] * 5 + [-6.0] + [-9.0] + [0.0]), RLF)) == 1


def test_event_log_round_trip(tmp_path):
    b = ping_pong(90)
    write_event_log(b.events, tmp_path / "ev.ndjson")
    assert read_event_log(tmp_path / "ev.ndjson") == b.events


def test_audit_flags_violations():
    evs = [
        HoEvent(0, 0, PREP, 0, 1),
        HoEvent(0, 0, PREP, 0, 1),
        HoEvent(1, 0, RELEASE, 0, 2),
        HoEvent(2, 0, HO, 0, 3),
        HoEvent(3, 0, PP, 0, 5),
    ] + [HoEvent(4, 1, PREP, 0, c) for c in range(1, 6)]
    msgs = " | ".join(audit_events(evs))
    for key in ("double preparation", "release without", "not prepared", "ping-pong", "5 cells prepared"):
        assert key in msgs
    # preparation in the same tick as the HO is not early enough
    assert audit_events([HoEvent(5, 0, PREP, 0, 1), HoEvent(5, 0, HO, 0, 1)])


def kpis(events, n_ues=1, seconds=60.0):
    n_ticks = int(seconds * 1000 / TICK)
    return session_kpis(events, n_ues, n_ticks, TICK, np.full(n_ues, 1e6), CFG)


def test_kpi_rates():
    evs = [HoEvent(100 * i, 0, HO, 0, 1) for i in range(10)]
    assert kpis(evs, seconds=300.0)["ho_per_min"] == pytest.approx(2.0)
    k = kpis([HoEvent(0, 0, HO, 0, 1)])
    assert k["ho_per_min"] == pytest.approx(1.0)
    assert k["reliability_pct"] == pytest.approx(100.0 * (1 - 5.0 / 60000.0))
    assert set(k) == set(KPI_NAMES)


def test_kpi_rates_average_over_ues():
    k = kpis([HoEvent(0, 0, RLF, 0, -1)], n_ues=2)
    assert k["rlf_per_min"] == pytest.approx(0.5)
    assert k["reliability_pct"] == pytest.approx(100.0 - 0.5 * 100.0 * 200.0 / 60000.0)


def test_reservation_of_one_cell_all_run_is_a_quarter():
    assert kpis([HoEvent(0, 0, PREP, 0, 1)])["resource_reservation_pct"] == pytest.approx(25.0)
    k = kpis([HoEvent(0, 0, PREP, 0, 1), HoEvent(3000, 0, RELEASE, 0, 1)])
    assert k["resource_reservation_pct"] == pytest.approx(12.5)
    assert k["cell_preps_per_min"] == pytest.approx(1.0)


def test_outage_truncated_at_end_of_run():
    n_ticks = 6000
    k = session_kpis([HoEvent(n_ticks - 5, 0, RLF, 0, -1)], 1, n_ticks, TICK, np.ones(1), CFG)
    assert k["reliability_pct"] == pytest.approx(100.0 * (1 - 50.0 / 60000.0))


def test_kpi_input_validation():
    with pytest.raises(ValueError):
        kpis([HoEvent(10**7, 0, HO, 0, 1)])
    with pytest.raises(ValueError):
        session_kpis([], 2, 10, TICK, np.ones(3), CFG)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_random_trajectories_satisfy_invariants(seed):
    rng = np.random.default_rng(seed)
    S, T, n = 6, 400, 4
    walk = np.cumsum(rng.normal(0, 1.5, size=(T, n, S)), axis=0) - 80.0
    sinr = rng.normal(0, 6, size=(T, n, S))
    b = SessionBatch(n, S, CFG, TICK, T)
    for t in range(T):
        b.step(t, walk[t], walk[t], sinr[t])
    assert audit_events(b.events) == []
    assert b.max_prepared_seen <= CFG.n_prepared
    k = session_kpis(b.events, n, T, TICK, np.ones(n), CFG)
    assert k["pp_per_min"] <= k["ho_per_min"]
    assert 0.0 <= k["reliability_pct"] <= 100.0
    assert 0.0 <= k["resource_reservation_pct"] <= 100.0
