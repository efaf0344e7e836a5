"""LTM handover state machine, vectorized over a batch of UE sessions.

A session is one UE under one configuration. All per-session state lives in
flat arrays indexed by session, so one :meth:`SessionBatch.step` call advances
every session by one tick. Target selection is delegated to a selector
callable, which is how the contextual bandit plugs in.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass
from typing import Callable, Iterable

import numpy as np

from .config import HoConfig

HO, HOF, RLF, PP, PREP, RELEASE = "HO", "HOF", "RLF", "PP", "CellPrep", "CellRelease"
EVENT_KINDS = (HO, HOF, RLF, PP, PREP, RELEASE)

# selector(tick, sessions, eligible (k, S) bool, metric (k, S)) -> target sector per session;
# returning the serving sector means "stay".
Selector = Callable[[int, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class HoEvent:
    tick: int
    ue: int
    kind: str
    source: int
    target: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


def write_event_log(events: Iterable[HoEvent], path) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")


def read_event_log(path) -> list[HoEvent]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                d = json.loads(line)
                out.append(HoEvent(int(d["tick"]), int(d["ue"]), str(d["kind"]), int(d["source"]), int(d["target"])))
    return out


class ContractViolation(RuntimeError):
    """Internal inconsistency such as a handover to an unprepared cell."""


def best_server_selector(tick, sessions, eligible, metric) -> np.ndarray:
    """Baseline target choice: strongest eligible candidate by ranking metric."""
    return np.argmax(np.where(eligible, metric, -np.inf), axis=1)


class SessionBatch:
    """State of ``n`` sessions over ``n_sectors`` candidate sectors.

    ``session_ue`` maps each session to the UE id written in its events;
    ``session_group`` tags the configuration a session belongs to so events
    can be split per configuration afterwards.
    """

    def __init__(
        self,
        n: int,
        n_sectors: int,
        cfg: HoConfig,
        tick_ms: float,
        n_ticks: int,
        session_ue: np.ndarray | None = None,
        session_group: np.ndarray | None = None,
    ):
        self.n = n
        self.S = n_sectors
        self.cfg = cfg
        self.tick_ms = tick_ms
        self.n_ticks = n_ticks
        self.ue = np.arange(n) if session_ue is None else np.asarray(session_ue)
        self.group = np.zeros(n, dtype=int) if session_group is None else np.asarray(session_group)
        self.ttt_ticks = max(1, int(round(cfg.ttt_ms / tick_ms)))
        self.delay_ticks = int(round((cfg.report_delay_ms + cfg.decision_delay_ms) / tick_ms))
        self.recovery_ticks = max(1, int(round(cfg.rlf_recovery_ms / tick_ms)))
        self.pp_ticks = cfg.pp_window_ms / tick_ms

        self.serving = np.full(n, -1)
        self.prepared = np.zeros((n, n_sectors), dtype=bool)
        self.prep_tick = np.full((n, n_sectors), -1)
        self.ttt = np.zeros(n, dtype=int)
        self.oos = np.zeros(n, dtype=int)
        self.last_ho_tick = np.full(n, -(10**9))
        self.prev_serving = np.full(n, -1)
        self.recover_until = np.full(n, -1)  # tick at which service resumes; -1 when in service
        self.outage_ms = np.zeros(n)
        self.events: list[HoEvent] = []
        self.event_groups: list[int] = []
        # last tick each event kind hit each session (for reward flags)
        self.last_event = {k: np.full(n, -(10**9)) for k in EVENT_KINDS}
        self._metrics: deque = deque(maxlen=self.delay_ticks + 1)
        self._measured: deque = deque(maxlen=self.delay_ticks + 1)
        self.max_prepared_seen = 0

    # ------------------------------------------------------------------ helpers
    @property
    def in_service(self) -> np.ndarray:
        return self.recover_until < 0

    def _emit(self, tick: int, s: int, kind: str, source: int, target: int) -> None:
        self.events.append(HoEvent(int(tick), int(self.ue[s]), kind, int(source), int(target)))
        self.event_groups.append(int(self.group[s]))
        self.last_event[kind][s] = tick

    def events_of(self, group: int) -> list[HoEvent]:
        return [ev for ev, g in zip(self.events, self.event_groups) if g == group]

    def _release_all(self, tick: int, s: int) -> None:
        for c in np.flatnonzero(self.prepared[s]):
            self._emit(tick, s, RELEASE, self.serving[s], c)
        self.prepared[s] = False
        self.prep_tick[s] = -1

    def _fail(self, tick: int, s: int) -> None:
        self._release_all(tick, s)
        self.recover_until[s] = tick + self.recovery_ticks
        self.outage_ms[s] += min(self.cfg.rlf_recovery_ms, (self.n_ticks - tick) * self.tick_ms)
        self.oos[s] = 0
        self.ttt[s] = 0

    # --------------------------------------------------------------- phases
    def attach(self, metric: np.ndarray) -> None:
        """Initial camping on the strongest sector."""
        self.serving = np.argmax(metric, axis=1)

    def reconcile(self, tick: int, metric: np.ndarray, active: np.ndarray) -> None:
        """Prepare the top-N non-serving detectable candidates (with hysteresis)."""
        cfg = self.cfg
        m = np.where(metric >= cfg.sensitivity_dbm, metric, -np.inf)
        rows = np.arange(self.n)
        m[rows, self.serving] = -np.inf
        score = m + cfg.prep_hysteresis_db * self.prepared
        k = min(cfg.n_prepared, self.S)
        top = np.argpartition(-score, k - 1, axis=1)[:, :k]
        want = np.zeros_like(self.prepared)
        np.put_along_axis(want, top, True, axis=1)
        want &= np.isfinite(m)
        want[~active] = self.prepared[~active]
        added = want & ~self.prepared
        removed = self.prepared & ~want
        for s, c in zip(*np.nonzero(removed)):
            self._emit(tick, s, RELEASE, self.serving[s], c)
        for s, c in zip(*np.nonzero(added)):
            self._emit(tick, s, PREP, self.serving[s], c)
        self.prepared = want
        self.prep_tick = np.where(added, tick, np.where(want, self.prep_tick, -1))
        self.max_prepared_seen = max(self.max_prepared_seen, int(self.prepared.sum(axis=1).max(initial=0)))

    def execute_ho(self, tick: int, sessions: np.ndarray, targets: np.ndarray,
                   rsrp_now: np.ndarray, sinr_now: np.ndarray) -> np.ndarray:
        """Run the handovers; returns a success flag per session."""
        cfg = self.cfg
        ok = np.zeros(len(sessions), dtype=bool)
        for i, (s, c) in enumerate(zip(sessions, targets)):
            if not self.prepared[s, c]:
                raise ContractViolation(f"session {s}: target {c} not prepared at tick {tick}")
            src = self.serving[s]
            if rsrp_now[s, c] < cfg.sensitivity_dbm or sinr_now[s, c] < cfg.qout_db:
                self._emit(tick, s, HOF, src, c)
                self._fail(tick, s)
                continue
            ok[i] = True
            self._emit(tick, s, HO, src, c)
            if c == self.prev_serving[s] and tick - self.last_ho_tick[s] <= self.pp_ticks:
                self._emit(tick, s, PP, src, c)
            self._emit(tick, s, RELEASE, src, c)
            self.prepared[s, c] = False
            self.prep_tick[s, c] = -1
            self.prev_serving[s] = src
            self.serving[s] = c
            self.last_ho_tick[s] = tick
            self.outage_ms[s] += min(cfg.interruption_ms, (self.n_ticks - tick) * self.tick_ms)
            self.oos[s] = 0
        return ok

    def rlf_check(self, tick: int, sinr_serving: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Out-of-sync bookkeeping for sessions in ``mask``; returns RLF sessions."""
        cfg = self.cfg
        below = sinr_serving < cfg.qout_db
        above = sinr_serving > cfg.qin_db
        self.oos = np.where(mask & below, self.oos + 1, np.where(mask & above, 0, self.oos))
        failed = np.flatnonzero(mask & (self.oos >= cfg.n310))
        for s in failed:
            self._emit(tick, s, RLF, self.serving[s], -1)
            self._fail(tick, s)
        return failed

    def step(self, tick: int, metric: np.ndarray, rsrp_now: np.ndarray, sinr_now: np.ndarray,
             selector: Selector | None = None, measured: np.ndarray | None = None) -> dict:
        """Advance every session by one tick.

        ``metric`` is the ranking metric measured this tick; decisions use the
        value from ``delay_ticks`` earlier. ``rsrp_now`` and ``sinr_now`` are
        the instantaneous link values deciding execution outcomes and sync.
        ``measured`` (filtered RSRP, defaults to ``metric``) picks the cell a
        session re-establishes on after an outage; a predicted metric would
        steer re-establishment by where the link is expected to be.
        """
        cfg = self.cfg
        self._metrics.append(metric)
        self._measured.append(metric if measured is None else measured)
        if len(self._metrics) <= self.delay_ticks:
            if tick == 0:
                self.attach(metric)
            sinr_serv = sinr_now[np.arange(self.n), self.serving]
            self.rlf_check(tick, sinr_serv, self.in_service)
            return {"decided": np.zeros(0, int), "targets": np.zeros(0, int)}
        m = self._metrics[0]
        rows = np.arange(self.n)

        resumed = np.flatnonzero(self.recover_until == tick)
        if len(resumed):
            self.serving[resumed] = np.argmax(self._measured[0][resumed], axis=1)
            self.recover_until[resumed] = -1
            self.ttt[resumed] = 0
            self.oos[resumed] = 0
        active = self.in_service

        self.reconcile(tick, m, active)

        eligible = self.prepared & (self.prep_tick < tick) & (m >= cfg.sensitivity_dbm)
        best = np.max(np.where(eligible, m, -np.inf), axis=1)
        cond = active & (best > m[rows, self.serving] + cfg.offset_db)
        self.ttt = np.where(cond, self.ttt + 1, 0)
        decided = np.flatnonzero(self.ttt >= self.ttt_ticks)
        targets = np.zeros(0, dtype=int)
        executed = np.zeros(self.n, dtype=bool)
        if len(decided):
            sel = selector or best_server_selector
            targets = np.asarray(sel(tick, decided, eligible[decided], m[decided]), dtype=int)
            self.ttt[decided] = 0
            move = targets != self.serving[decided]
            if move.any():
                self.execute_ho(tick, decided[move], targets[move], rsrp_now, sinr_now)
                executed[decided[move]] = True

        check = self.in_service & ~executed
        self.rlf_check(tick, sinr_now[rows, self.serving], check)
        return {"decided": decided, "targets": targets}


def audit_events(events: Iterable[HoEvent], n_prepared: int = 4) -> list[str]:
    """Invariant violations found in one configuration's event log.

    Checks that every HO/HOF target was prepared at a strictly earlier tick,
    that no UE ever holds more than ``n_prepared`` preparations, that
    preparations and releases pair up, and that each PP directly follows an
    HO of the same UE at the same tick.
    """
    problems: list[str] = []
    open_prep: dict[int, dict[int, int]] = {}
    last_ho: dict[int, HoEvent] = {}
    for ev in events:
        prepared = open_prep.setdefault(ev.ue, {})
        if ev.kind == PREP:
            if ev.target in prepared:
                problems.append(f"double preparation: {ev}")
            prepared[ev.target] = ev.tick
            if len(prepared) > n_prepared:
                problems.append(f"{len(prepared)} cells prepared: {ev}")
        elif ev.kind == RELEASE:
            if prepared.pop(ev.target, None) is None:
                problems.append(f"release without preparation: {ev}")
        elif ev.kind in (HO, HOF):
            t0 = prepared.get(ev.target)
            if t0 is None or t0 >= ev.tick:
                problems.append(f"target not prepared beforehand: {ev}")
            if ev.kind == HO:
                last_ho[ev.ue] = ev
        elif ev.kind == PP:
            ho = last_ho.get(ev.ue)
            if ho is None or (ho.tick, ho.source, ho.target) != (ev.tick, ev.source, ev.target):
                problems.append(f"ping-pong without its handover: {ev}")
    return problems


# ------------------------------------------------------------------ KPIs

KPI_NAMES = (
    "ho_per_min",
    "hof_per_min",
    "pp_per_min",
    "capacity_bps",
    "rlf_per_min",
    "reliability_pct",
    "cell_preps_per_min",
    "resource_reservation_pct",
)


def session_kpis(
    events: Iterable[HoEvent],
    n_ues: int,
    n_ticks: int,
    tick_ms: float,
    capacity_bps: np.ndarray,
    cfg: HoConfig,
) -> dict[str, float]:
    """KPIs of one configuration from its event log.

    Rates are counts per UE-minute; reliability and reservation are per-UE
    percentages averaged over UEs; capacity is the per-UE mean throughput
    averaged over UEs. ``capacity_bps`` is one value per UE since the event
    log does not carry link rates.
    """
    capacity_bps = np.asarray(capacity_bps, dtype=float)
    if capacity_bps.shape != (n_ues,):
        raise ValueError(f"capacity needs one value per UE ({n_ues}), got {capacity_bps.shape}")
    duration_ms = n_ticks * tick_ms
    minutes = duration_ms / 60000.0
    counts = {k: np.zeros(n_ues) for k in (HO, HOF, RLF, PP, PREP)}
    outage = np.zeros(n_ues)
    reserved_ticks = np.zeros(n_ues)
    open_prep: dict[tuple[int, int], int] = {}
    for ev in events:
        if not 0 <= ev.ue < n_ues or not 0 <= ev.tick < n_ticks:
            raise ValueError(f"event outside the logged span: {ev}")
        if ev.kind in counts:
            counts[ev.kind][ev.ue] += 1
        if ev.kind == HO:
            outage[ev.ue] += min(cfg.interruption_ms, (n_ticks - ev.tick) * tick_ms)
        elif ev.kind in (HOF, RLF):
            outage[ev.ue] += min(cfg.rlf_recovery_ms, (n_ticks - ev.tick) * tick_ms)
        if ev.kind == PREP:
            open_prep[(ev.ue, ev.target)] = ev.tick
        elif ev.kind == RELEASE:
            start = open_prep.pop((ev.ue, ev.target))
            reserved_ticks[ev.ue] += ev.tick - start
    for (ue, _), start in open_prep.items():
        reserved_ticks[ue] += n_ticks - start
    reliability = 100.0 * (1.0 - outage / duration_ms)
    reservation = 100.0 * reserved_ticks / (n_ticks * cfg.n_prepared)
    return {
        "ho_per_min": float(np.mean(counts[HO] / minutes)),
        "hof_per_min": float(np.mean(counts[HOF] / minutes)),
        "pp_per_min": float(np.mean(counts[PP] / minutes)),
        "capacity_bps": float(np.mean(capacity_bps)),
        "rlf_per_min": float(np.mean(counts[RLF] / minutes)),
        "reliability_pct": float(np.mean(reliability)),
        "cell_preps_per_min": float(np.mean(counts[PREP] / minutes)),
        "resource_reservation_pct": float(np.mean(reservation)),
    }
