"""Monte-Carlo driver: one replicate advances every requested configuration in lockstep.

All configurations of a replicate see the same UE trajectories, shadowing and
fading (common random numbers), so differences between configurations come
from the mobility logic alone. Measurements, filters and predictors depend
only on whether the RIS is deployed, so they are computed once per RIS
variant and shared by the sessions that use that variant.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bandit import ContextBuilder, KernelUCB, RewardInputs, reward
from .channel import ChannelState, db2lin, sinr_matrix_db, spectral_efficiency
from .config import CONFIGURATIONS, ScenarioConfig, validate
from .geometry import build_layout, generate_trajectory
from .handover import HO, HOF, PP, RLF, HoEvent, SessionBatch, session_kpis
from .prediction import L1L3Filter, LmmsePredictor
from .ris import N_BEAMS, RisPowerMaps, panel_codebook

log = logging.getLogger(__name__)

# substream labels for the per-replicate seed tree
MOBILITY, CHANNEL = 1, 2


def replicate_seed(master_seed: int, replicate: int, label: int) -> np.random.SeedSequence:
    """Seed of one labeled substream of one replicate.

    Independent of the configurations being run, so every configuration of a
    replicate shares the same random draws.
    """
    return np.random.SeedSequence([int(master_seed), int(replicate), int(label)])


def build_power_maps(cfg: ScenarioConfig, use_cache: bool = True) -> RisPowerMaps:
    layout = build_layout(cfg.geometry)
    codebooks = {}
    for panel in layout.cells[0].panels:
        cb, _ = panel_codebook(panel, layout, cfg.channel, cfg.ris, cfg.ris.strategy, use_cache)
        codebooks[panel.slot] = cb
    return RisPowerMaps(layout, cfg.channel, cfg.ris, codebooks)


@dataclass
class Trace:
    """Optional per-replicate dumps.

    ``decisions`` holds one dict per bandit decision; ``channel`` one row per
    tick for ``channel_ue`` (tick, serving sector and SINR per configuration).
    """

    decisions: list = field(default_factory=list)
    channel: list = field(default_factory=list)
    channel_ue: int | None = 0


@dataclass
class ReplicateResult:
    replicate: int
    n_ticks: int
    events: dict[int, list[HoEvent]]
    capacity: dict[int, np.ndarray]
    kpis: dict[int, dict[str, float]]
    max_prepared: int
    trace: Trace | None = None


class _CmabAgent:
    """One bandit per configuration plus its pending delayed rewards."""

    def __init__(self, cfg: ScenarioConfig, n_sites: int):
        self.ctx = ContextBuilder(n_sites)
        self.bandit = KernelUCB.from_config(self.ctx.dim, cfg.bandit)
        self.pending: list[tuple[int, int, int, np.ndarray, dict | None]] = []


def run_replicate(
    cfg: ScenarioConfig,
    replicate: int,
    maps: RisPowerMaps | None = None,
    trace: Trace | None = None,
) -> ReplicateResult:
    validate(cfg)
    sim, ho_cfg, ch_cfg = cfg.sim, cfg.handover, cfg.channel
    configs = tuple(sim.configurations)
    flags = np.array([CONFIGURATIONS[c] for c in configs], dtype=bool)  # (C, 3)
    use_ris, use_pred, use_cmab = flags[:, 0], flags[:, 1], flags[:, 2]
    if use_ris.any() and maps is None:
        maps = build_power_maps(cfg)

    layout = build_layout(cfg.geometry)
    U, S, C = sim.n_ues, layout.n_sectors, len(configs)
    tick_s = sim.tick_ms / 1000.0
    n_ticks = int(round(sim.duration_s / tick_s))
    ssb_ticks = int(round(ch_cfg.ssb_period_ms / sim.tick_ms))
    bw = ch_cfg.bandwidth_mhz * 1e6

    mob_rng = np.random.default_rng(replicate_seed(sim.master_seed, replicate, MOBILITY))
    trajs = [generate_trajectory(0, sim.duration_s, layout, tick_s, cfg.mobility, rng=mob_rng) for _ in range(U)]
    pos = np.stack([t.positions for t in trajs], axis=1)  # (T+1, U, 2)
    speed = np.stack([t.speeds for t in trajs], axis=1)
    channel = ChannelState(layout, ch_cfg, U, replicate_seed(sim.master_seed, replicate, CHANNEL))

    # RIS variants: 0 = no RIS, 1 = RIS deployed (only if requested)
    V = 2 if use_ris.any() else 1
    var_of_cfg = use_ris.astype(int)
    filt = L1L3Filter((V, U, S), cfg.prediction.l1_window, cfg.prediction.l3_coeff)
    predictor = (
        LmmsePredictor.from_config((V, U, S), cfg.prediction, ch_cfg.ssb_period_ms / 1000.0)
        if use_pred.any() else None
    )
    panels = layout.panels
    if maps is not None:
        feed_sector = np.array([
            layout.cells[p.cell_id].sector_ids[maps.sector_of_slot[p.slot]] for p in panels
        ])
        panel_slot = np.array([p.slot for p in panels])
        sequential = maps.strategy == "sequential"
    held_dbm = np.full(U, -np.inf)
    held_key = np.full(U, -1)

    N = C * U
    batch = SessionBatch(
        N, S, ho_cfg, sim.tick_ms, n_ticks,
        session_ue=np.tile(np.arange(U), C), session_group=np.repeat(np.array(configs), U),
    )
    sess_var = np.repeat(var_of_cfg, U)
    sess_ue = np.tile(np.arange(U), C)
    agents = {c: _CmabAgent(cfg, layout.n_sites) for c, cm in zip(configs, use_cmab) if cm}
    reward_ticks = max(1, int(round(cfg.bandit.reward_window_ms / sim.tick_ms)))
    ring_len = max(cfg.bandit.avg_samples, reward_ticks + 1)
    thr_ring = np.zeros((ring_len, N))
    sinr_ring = np.zeros((cfg.bandit.avg_samples, V, U, S))
    thr_sum = np.zeros(N)
    metric_tab = np.empty((V, 2, U, S))
    cfg_pred_idx = use_pred.astype(int)
    interruption_frac = min(1.0, ho_cfg.interruption_ms / sim.tick_ms)
    alphas = (cfg.bandit.alpha_hof, cfg.bandit.alpha_ho, cfg.bandit.alpha_pp)
    rows = np.arange(N)

    def selector(tick, sessions, eligible, metric):
        targets = np.argmax(np.where(eligible, metric, -np.inf), axis=1)
        group = batch.group[sessions]
        for i, s in enumerate(sessions):
            c = int(group[i])
            if c not in agents:
                continue
            agent = agents[c]
            serv = int(batch.serving[s])
            arms = np.concatenate([[serv], np.flatnonzero(eligible[i])])
            u, v = int(sess_ue[s]), int(sess_var[s])
            sinr_avg = sinr_ring[:, v, u, arms].mean(axis=0)
            se_avg = thr_ring[:, s].mean() / bw
            since = min((tick - batch.last_ho_tick[s]) * tick_s, 30.0)
            cont = np.column_stack([
                metric[i, arms], sinr_avg, np.full(len(arms), se_avg),
                np.full(len(arms), speed[tick, u]), np.full(len(arms), since),
            ])
            X = agent.ctx.build(cont, arms == serv, layout.sector_site[arms])
            k = agent.bandit.select_arm(X, metric[i, arms], arms)
            targets[i] = arms[k]
            rec = None
            if trace is not None:
                rec = {"tick": int(tick), "ue": u, "configuration": c, "candidates": arms.tolist(),
                       "ucb": agent.bandit.scores(X).tolist(), "chosen": int(arms[k]), "reward": None}
                trace.decisions.append(rec)
            agent.pending.append((tick + reward_ticks, int(s), int(tick), X[k], rec))
        return targets

    for t in range(n_ticks):
        xy = pos[t]
        direct = channel.advance(xy, speed[t], tick_s)  # (U, S)
        data = np.broadcast_to(direct, (V, U, S)).copy()
        meas_ris = None
        ssb = t % ssb_ticks == 0
        if V == 2:
            pid, sub = channel.panel_of_ue, channel.subzone_of_ue
            inz = np.flatnonzero(pid >= 0)
            key = np.where(pid >= 0, pid * N_BEAMS + sub, -1)
            held_dbm[held_key != key] = -np.inf
            held_key[:] = key
            if ssb:
                meas_ris = direct.copy()
            if len(inz):
                slot = panel_slot[pid[inz]]
                uv = np.stack([panels[p].local(xy[u]) for p, u in zip(pid[inz], inz)])
                beam = sub[inz] if sequential else np.zeros(len(inz), dtype=int)
                ris_dbm = maps.lookup(slot, beam, uv)
                fs = feed_sector[pid[inz]]
                data[1, inz, fs] = np.maximum(direct[inz, fs], ris_dbm)
                if ssb:
                    # a beam is measured when lit and its last value held until the next sweep
                    lit = sub[inz] == (t // ssb_ticks) % N_BEAMS if sequential else np.ones(len(inz), bool)
                    held_dbm[inz[lit]] = ris_dbm[lit]
                    meas_ris[inz, fs] = np.maximum(direct[inz, fs], held_dbm[inz])
        rx_mw = db2lin(direct)
        sinr_v = np.stack([sinr_matrix_db(db2lin(data[v]), rx_mw, layout, channel.noise_mw) for v in range(V)])
        sinr_ring[t % cfg.bandit.avg_samples] = sinr_v

        if ssb:
            meas = data.copy() if V == 1 else np.stack([direct, meas_ris])
            l3 = filt.update(meas)
            metric_tab[:, 0] = l3
            metric_tab[:, 1] = l3
            if predictor is not None:
                predictor.update(l3)
                pred, cold = predictor.predict()
                if not cold:
                    metric_tab[:, 1] = pred

        metric = metric_tab[var_of_cfg, cfg_pred_idx].reshape(N, S)
        measured = metric_tab[var_of_cfg, 0].reshape(N, S)
        rsrp_now = data[var_of_cfg].reshape(N, S)
        sinr_now = sinr_v[var_of_cfg].reshape(N, S)
        batch.step(t, metric, rsrp_now, sinr_now, selector if agents else None, measured)

        serv_sinr = sinr_now[rows, batch.serving]
        thr = spectral_efficiency(serv_sinr, ch_cfg.max_spectral_efficiency) * bw
        thr = np.where(batch.in_service, thr, 0.0)
        thr = np.where(batch.last_event[HO] == t, thr * (1.0 - interruption_frac), thr)
        thr_ring[t % ring_len] = thr
        thr_sum += thr

        for c, agent in agents.items():
            while agent.pending and agent.pending[0][0] <= t:
                _, s, t_dec, x, rec = agent.pending.pop(0)
                idx = [(t_dec + 1 + k) % ring_len for k in range(reward_ticks)]
                r_thr = float(thr_ring[idx, s].mean())
                flag = {k: bool(batch.last_event[k][s] >= t_dec) for k in (HO, HOF, RLF, PP)}
                r = reward(RewardInputs(r_thr, flag[HO], flag[HOF], flag[RLF], flag[PP], *alphas))
                agent.bandit.update(x, r)
                if rec is not None:
                    rec["reward"] = r

        if trace is not None and trace.channel_ue is not None:
            u = trace.channel_ue
            srv = batch.serving[u::U]
            trace.channel.append({
                "tick": t, "ue": u, "x": float(xy[u, 0]), "y": float(xy[u, 1]),
                "serving": srv.tolist(),
                "sinr_db": [float(sinr_now[c * U + u, srv[c]]) for c in range(C)],
                "best_rsrp_dbm": float(direct[u].max()),
            })

    capacity = {c: thr_sum[i * U:(i + 1) * U] / n_ticks for i, c in enumerate(configs)}
    events = {c: batch.events_of(c) for c in configs}
    kpis = {c: session_kpis(events[c], U, n_ticks, sim.tick_ms, capacity[c], ho_cfg) for c in configs}
    return ReplicateResult(replicate, n_ticks, events, capacity, kpis, batch.max_prepared_seen, trace)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    replicates: list[ReplicateResult]

    def values(self, configuration: int, kpi: str) -> np.ndarray:
        return np.array([r.kpis[configuration][kpi] for r in self.replicates])


def _run_one(args):
    cfg, rep, maps = args
    return run_replicate(cfg, rep, maps)


def run_scenario(cfg: ScenarioConfig, maps: RisPowerMaps | None = None, progress=None) -> ScenarioResult:
    """Every replicate of the scenario, in replicate order regardless of worker count."""
    validate(cfg)
    needs_ris = any(CONFIGURATIONS[c][0] for c in cfg.sim.configurations)
    if needs_ris and maps is None:
        maps = build_power_maps(cfg)
    jobs = [(cfg, r, maps) for r in range(cfg.sim.n_replicates)]
    results = []
    if cfg.sim.workers > 1:
        with ProcessPoolExecutor(cfg.sim.workers) as pool:
            for res in pool.map(_run_one, jobs):
                results.append(res)
                if progress:
                    progress(res)
    else:
        for job in jobs:
            res = _run_one(job)
            results.append(res)
            if progress:
                progress(res)
    return ScenarioResult(cfg, results)
