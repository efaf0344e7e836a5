"""RIS phase optimisation, codebooks and beam sweeping.

The received power through a diagonal RIS at location ``b`` is
``P_b = |sum_i c_bi exp(j phi_i)|^2`` with ``c_bi = h_ru[b, i] * h_br[i]``.
Phases are optimised per sub-zone for the worst location of the sub-zone
(max-min) using Adam ascent on the power at the current argmin.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import SPEED_OF_LIGHT, path_loss_db, sector_gain_db, wrap_degrees
from .config import ChannelConfig, RisConfig
from .geometry import Layout, RisPanel

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
N_BEAMS = 16


def canonical(phi: np.ndarray) -> np.ndarray:
    """Wrap phases into [0, 2 pi)."""
    out = np.mod(np.asarray(phi, dtype=float), TWO_PI)
    out[out >= TWO_PI] = 0.0
    return out


def _check(phi, h_br, h_ru):
    phi = np.asarray(phi, dtype=float)
    h_br = np.asarray(h_br)
    h_ru = np.asarray(h_ru)
    if not (phi.shape[-1] == h_br.shape[-1] == h_ru.shape[-1]):
        raise ValueError(f"length mismatch: phi {phi.shape}, h_br {h_br.shape}, h_ru {h_ru.shape}")
    return phi, h_br, h_ru


def power_at(phi, h_br, h_ru_b) -> float:
    """Received power gain ``|h_eff|^2`` at one location."""
    phi, h_br, h_ru = _check(phi, h_br, h_ru_b)
    h = np.sum(h_ru * h_br * np.exp(1j * phi))
    return float(abs(h) ** 2)


def grad_phi(phi, h_br, h_ru_b) -> np.ndarray:
    """Gradient of :func:`power_at` with respect to the phases.

    ``dP/dphi_i = 2 Im(h_eff * conj(c_i exp(j phi_i)))``.
    """
    phi, h_br, h_ru = _check(phi, h_br, h_ru_b)
    terms = h_ru * h_br * np.exp(1j * phi)
    h = terms.sum()
    return 2.0 * np.imag(h * np.conj(terms))


@dataclass
class AdamState:
    n: int
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps_num: float = 1e-8
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)
    step_count: int = 0

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n)
        if self.v is None:
            self.v = np.zeros(self.n)

    @classmethod
    def from_config(cls, n: int, cfg: RisConfig) -> "AdamState":
        return cls(n, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_num)

    def ascent_step(self, phi: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.step_count)
        v_hat = self.v / (1 - self.beta2**self.step_count)
        return phi + self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps_num)


@dataclass
class ZoneResult:
    phi: np.ndarray
    trace: np.ndarray  # J_t, worst-location power per iteration (input scale)
    converged: bool
    iterations: int
    initial_min: float
    final_min: float

    @property
    def warning(self) -> bool:
        return not self.converged


def optimize_zone(
    h_br,
    h_ru_grid,
    adam: AdamState | None = None,
    eps: float = 1e-4,
    max_iters: int = 5000,
    phi0: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    patience: int = 1,
) -> ZoneResult:
    """Max-min phase optimisation over the locations in ``h_ru_grid``.

    Each iteration evaluates the power at every location, takes the worst one
    and applies an Adam ascent step to its power. Stops once the relative
    change of the worst-case power stays below ``eps`` for ``patience``
    consecutive iterations, or after ``max_iters`` (``converged=False``).
    Returns the best phases seen.
    """
    h_br = np.asarray(h_br)
    grid = np.atleast_2d(np.asarray(h_ru_grid))
    if grid.shape[0] == 0:
        raise ValueError("empty location grid")
    if grid.shape[1] != h_br.shape[0]:
        raise ValueError(f"length mismatch: h_br {h_br.shape}, grid {grid.shape}")
    if not eps > 0:
        raise ValueError("eps must be positive")
    n = h_br.shape[0]
    coeff = grid * h_br[None, :]
    # Adam's eps_num assumes O(1) gradients; the physical gains are ~1e-8
    scale = math.sqrt(np.mean(np.sum(np.abs(coeff) ** 2, axis=1)))
    if scale == 0:
        phi = canonical(phi0 if phi0 is not None else np.zeros(n))
        return ZoneResult(phi, np.zeros(1), True, 0, 0.0, 0.0)
    coeff = coeff / scale
    adam = adam or AdamState(n)
    if phi0 is None:
        rng = rng or np.random.default_rng(0)
        phi0 = rng.uniform(0.0, TWO_PI, n)
    phi = np.array(phi0, dtype=float)
    trace = []
    best_j, best_phi = -1.0, phi.copy()
    j_prev = 0.0
    quiet = 0
    converged = False
    for _ in range(max_iters):
        e = np.exp(1j * phi)
        h = coeff @ e
        p = h.real**2 + h.imag**2
        bm = int(np.argmin(p))
        j = float(p[bm])
        trace.append(j)
        if j > best_j:
            best_j, best_phi = j, phi.copy()
        if j > 0 and abs((j - j_prev) / j) < eps:
            quiet += 1
            if quiet >= patience:
                converged = True
                break
        else:
            quiet = 0
        terms = coeff[bm] * e
        g = 2.0 * np.imag(h[bm] * np.conj(terms))
        phi = adam.ascent_step(phi, g)
        j_prev = j
    trace = np.asarray(trace) * scale**2
    return ZoneResult(
        phi=canonical(best_phi),
        trace=trace,
        converged=converged,
        iterations=len(trace),
        initial_min=float(trace[0]),
        final_min=float(best_j * scale**2),
    )


# ---------------------------------------------------------------- geometry


def array_shape(n_elements: int) -> tuple[int, int]:
    """(rows, cols) of the most square array with both sides divisible by 4."""
    best = None
    for rows in range(4, int(math.isqrt(n_elements)) + 1, 4):
        if n_elements % rows == 0 and (n_elements // rows) % 4 == 0:
            best = (rows, n_elements // rows)
    if best is None:
        raise ValueError(f"{n_elements} elements cannot be tiled into a 4x4 grid of blocks")
    return best


def element_groups(n_elements: int) -> list[np.ndarray]:
    """Split the array into 16 contiguous rectangular blocks (4 x 4 tiling)."""
    rows, cols = array_shape(n_elements)
    idx = np.arange(n_elements).reshape(rows, cols)
    br, bc = rows // 4, cols // 4
    return [idx[i * br : (i + 1) * br, j * bc : (j + 1) * bc].ravel() for i in range(4) for j in range(4)]


@dataclass(frozen=True)
class PanelGeometry:
    """3-D element layout of one panel and the gNB feeding it."""

    elements: np.ndarray  # (N, 3)
    center: np.ndarray  # (3,)
    gnb: np.ndarray  # (3,)
    sector: int
    sector_gain_db: float
    wavelength: float


def panel_geometry(panel: RisPanel, layout: Layout, channel: ChannelConfig, n_elements: int) -> PanelGeometry:
    """Vertical uniform rectangular array, half-wavelength spacing, facing its zone."""
    lam = SPEED_OF_LIGHT / (channel.carrier_ghz * 1e9)
    rows, cols = array_shape(n_elements)
    zone_center = panel.to_world(np.array([panel.side / 2, panel.side / 2]))
    normal = zone_center - np.asarray(panel.position)
    normal = normal / np.linalg.norm(normal)
    tangent = np.array([-normal[1], normal[0], 0.0])
    up = np.array([0.0, 0.0, 1.0])
    center = np.array([panel.position[0], panel.position[1], layout.ris_height])
    d = lam / 2
    r = (np.arange(rows) - (rows - 1) / 2) * d
    c = (np.arange(cols) - (cols - 1) / 2) * d
    rr, cc = np.meshgrid(r, c, indexing="ij")
    elements = center + rr.ravel()[:, None] * up + cc.ravel()[:, None] * tangent
    cell = layout.cells[panel.cell_id]
    gnb = np.array([cell.center[0], cell.center[1], layout.bs_height])
    # the co-sited sector with the best gain towards the panel feeds it
    v = center - gnb
    az = math.degrees(math.atan2(v[1], v[0]))
    el = math.degrees(math.atan2(-v[2], math.hypot(v[0], v[1])))
    sectors = list(cell.sector_ids)
    az_off = wrap_degrees(az - layout.sector_boresight_deg[sectors])
    gains = sector_gain_db(az_off, el - channel.downtilt_deg, channel.beamwidth_deg,
                           channel.max_attenuation_db, channel.element_gain_dbi)
    k = int(np.argmax(gains))
    return PanelGeometry(elements, center, gnb, sectors[k], float(gains[k]), lam)


def _amplitude(distance: np.ndarray, channel: ChannelConfig, h_tx: float, h_rx: float) -> np.ndarray:
    # UMa-LOS is undefined below 10 m; hold it at the 10 m value there
    d = np.maximum(distance, 10.0)
    return 10.0 ** (-path_loss_db(d, channel.carrier_ghz, max(h_tx, h_rx), min(h_tx, h_rx)) / 20.0)


def bs_ris_channel(geom: PanelGeometry, channel: ChannelConfig) -> np.ndarray:
    """Static LOS gNB->RIS gains, exact spherical phase per element."""
    d = np.linalg.norm(geom.elements - geom.gnb, axis=1)
    amp = _amplitude(np.linalg.norm(geom.center - geom.gnb), channel, geom.gnb[2], geom.center[2])
    return amp * np.exp(-1j * TWO_PI * d / geom.wavelength)


def ris_ue_channel(geom: PanelGeometry, points_xy: np.ndarray, ue_height: float, channel: ChannelConfig) -> np.ndarray:
    """LOS RIS->UE gains for each point, shape (n_points, N)."""
    pts = np.atleast_2d(points_xy)
    p3 = np.column_stack([pts, np.full(len(pts), ue_height)])
    d = np.linalg.norm(p3[:, None, :] - geom.elements[None, :, :], axis=2)
    amp = _amplitude(np.linalg.norm(p3 - geom.center, axis=1), channel, geom.center[2], ue_height)
    return amp[:, None] * np.exp(-1j * TWO_PI * d / geom.wavelength)


# ---------------------------------------------------------------- codebooks


@dataclass
class RisCodebook:
    entries: np.ndarray  # (16, N) phases in [0, 2 pi)
    strategy: str
    groups: list[np.ndarray] | None = None
    converged: np.ndarray | None = None

    def __post_init__(self):
        if self.strategy not in ("sequential", "simultaneous"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.entries.shape[0] != N_BEAMS:
            raise ValueError(f"codebook needs {N_BEAMS} entries, got {self.entries.shape[0]}")

    @property
    def n_elements(self) -> int:
        return self.entries.shape[1]

    def combined(self) -> np.ndarray:
        """Full-panel phases with every group steering its own sub-beam."""
        if self.groups is None:
            raise ValueError("only simultaneous codebooks have a combined configuration")
        phi = np.zeros(self.n_elements)
        for k, g in enumerate(self.groups):
            phi[g] = self.entries[k, g]
        return phi

    def configurations(self) -> np.ndarray:
        """Physical phase vectors the panel can apply, one row per SSB frame type."""
        if self.strategy == "sequential":
            return self.entries
        return self.combined()[None, :]


def beam_schedule(codebook: RisCodebook, frame_index: int) -> np.ndarray:
    """Indices of the beams lit during SSB frame ``frame_index``."""
    if frame_index < 0:
        raise ValueError("frame index must be >= 0")
    if codebook.strategy == "sequential":
        return np.array([frame_index % N_BEAMS])
    return np.arange(N_BEAMS)


def build_codebook(
    panel: RisPanel,
    h_br: np.ndarray,
    channel_sampler,
    strategy: str = "sequential",
    config: RisConfig | None = None,
    seed: int = 0,
) -> RisCodebook:
    """Optimise one entry per sub-zone.

    ``channel_sampler(i)`` returns the RIS->UE gains on sub-zone ``i``'s grid,
    shape (n_points, N). Sequential entries use the whole panel; simultaneous
    entry ``i`` only drives element group ``i``.
    """
    config = config or RisConfig()
    n = h_br.shape[0]
    n_sub = panel.n_sub**2
    if n_sub != N_BEAMS:
        raise ValueError(f"panel has {n_sub} sub-zones, codebooks need {N_BEAMS}")
    groups = element_groups(n) if strategy == "simultaneous" else None
    entries = np.zeros((N_BEAMS, n))
    converged = np.zeros(N_BEAMS, dtype=bool)
    seeds = np.random.SeedSequence([seed, panel.slot]).spawn(N_BEAMS)
    for i in range(N_BEAMS):
        h_ru = channel_sampler(i)
        rng = np.random.default_rng(seeds[i])
        cols = groups[i] if groups is not None else slice(None)
        hb = h_br[cols]
        res = optimize_zone(
            hb, h_ru[:, cols], AdamState.from_config(hb.shape[0], config), config.tol,
            config.max_iters, rng=rng, patience=config.patience,
        )
        if res.warning:
            log.debug("sub-zone %d of panel slot %d hit max_iters=%d", i, panel.slot, config.max_iters)
        if groups is None:
            entries[i] = res.phi
        else:
            entries[i, groups[i]] = res.phi
        converged[i] = res.converged
    if not converged.all():
        log.warning("panel slot %d (%s): %d of %d sub-zones stopped at max_iters; best-so-far phases kept",
                    panel.slot, strategy, int((~converged).sum()), N_BEAMS)
    return RisCodebook(entries, strategy, groups, converged)


def zone_powers(codebook: RisCodebook, h_br: np.ndarray, h_ru_points: np.ndarray, subzone: np.ndarray) -> np.ndarray:
    """Received power gain at each point under the codebook.

    Sequential: each point is lit by the entry of its own sub-zone.
    Simultaneous: every point sees the combined configuration.
    """
    coeff = h_ru_points * h_br[None, :]
    if codebook.strategy == "sequential":
        e = np.exp(1j * codebook.entries[subzone])
        h = np.sum(coeff * e, axis=1)
    else:
        h = coeff @ np.exp(1j * codebook.combined())
    return np.abs(h) ** 2


def subzone_mean_powers(powers: np.ndarray, subzone: np.ndarray) -> np.ndarray:
    return np.array([powers[subzone == i].mean() for i in range(N_BEAMS)])


# ---------------------------------------------------------------- system view


def codebook_key(panel: RisPanel, layout: Layout, channel: ChannelConfig, ris: RisConfig, strategy: str) -> str:
    """Hash of everything that determines a panel's codebook."""
    cell = layout.cells[panel.cell_id]
    rel = (panel.position[0] - cell.center[0], panel.position[1] - cell.center[1])
    payload = {
        "rel": [round(rel[0], 9), round(rel[1], 9)],
        "direction": list(panel.direction),
        "side": panel.side,
        "n_sub": panel.n_sub,
        "heights": [layout.bs_height, layout.ue_height, layout.ris_height],
        "carrier": channel.carrier_ghz,
        "pattern": [channel.beamwidth_deg, channel.max_attenuation_db, channel.element_gain_dbi, channel.downtilt_deg],
        "n": ris.n_elements,
        "strategy": strategy,
        "opt": [ris.learning_rate, ris.beta1, ris.beta2, ris.eps_num, ris.tol, ris.max_iters, ris.patience, ris.seed],
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _cache_path(cache_dir: str | Path, slot: int, strategy: str, ris: RisConfig, key: str) -> Path:
    return Path(cache_dir) / f"codebook_slot{slot}_{strategy}_N{ris.n_elements}_seed{ris.seed}_{key}.npz"


def save_codebook(path: Path, codebook: RisCodebook, key: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        path,
        entries=codebook.entries,
        converged=codebook.converged if codebook.converged is not None else np.zeros(0, bool),
        strategy=np.array(codebook.strategy),
        key=np.array(key),
    )


def load_codebook(path: Path, key: str) -> RisCodebook | None:
    if not path.exists():
        return None
    with np.load(path, allow_pickle=False) as f:
        if str(f["key"]) != key:
            return None
        strategy = str(f["strategy"])
        entries = f["entries"]
        converged = f["converged"]
    groups = element_groups(entries.shape[1]) if strategy == "simultaneous" else None
    return RisCodebook(entries, strategy, groups, converged if converged.size else None)


def panel_codebook(
    panel: RisPanel,
    layout: Layout,
    channel: ChannelConfig,
    ris: RisConfig,
    strategy: str | None = None,
    use_cache: bool = True,
) -> tuple[RisCodebook, bool]:
    """Codebook for one panel, from the on-disk cache when possible.

    Returns (codebook, cache_hit).
    """
    strategy = strategy or ris.strategy
    key = codebook_key(panel, layout, channel, ris, strategy)
    path = _cache_path(ris.cache_dir, panel.slot, strategy, ris, key)
    if use_cache:
        cb = load_codebook(path, key)
        if cb is not None:
            log.info("codebook cache hit: %s", path)
            return cb, True
    geom = panel_geometry(panel, layout, channel, ris.n_elements)
    h_br = bs_ris_channel(geom, channel)

    def sampler(i):
        return ris_ue_channel(geom, panel.grid_points(i), layout.ue_height, channel)

    cb = build_codebook(panel, h_br, sampler, strategy, ris, ris.seed)
    if use_cache:
        save_codebook(path, cb, key)
        log.info("codebook cached: %s", path)
    return cb, False


def tile_gain_db(tile_size: int) -> float:
    """Coherent gain of driving ``tile_size`` co-phased elements per control.

    Each tile is treated as one scatterer with ``tile_size`` times the field
    of a single element; the tile's own directivity is ignored.
    """
    if tile_size < 1:
        raise ValueError("tile_size must be >= 1")
    return 20.0 * math.log10(tile_size)


def coverage_grid(
    panel: RisPanel, layout: Layout, channel: ChannelConfig, codebook: RisCodebook, step: float = 1.0,
    tile_size: int = 1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Received RIS-path power (dBm) on the zone's grid.

    Returns (points_xy, subzone index, rsrp_dbm) for every grid point.
    """
    geom = panel_geometry(panel, layout, channel, codebook.n_elements)
    h_br = bs_ris_channel(geom, channel)
    pts = panel.grid_points(step=step)
    sub = panel.sub_zone(pts)
    gains = np.concatenate([
        zone_powers(codebook, h_br, ris_ue_channel(geom, chunk, layout.ue_height, channel), s)
        for chunk, s in zip(np.array_split(pts, max(1, len(pts) // 400)), np.array_split(sub, max(1, len(pts) // 400)))
    ])
    rsrp = channel.tx_power_dbm + geom.sector_gain_db + tile_gain_db(tile_size) + 10 * np.log10(gains)
    return pts, sub, rsrp


class RisPowerMaps:
    """Pre-computed RIS-path RSRP over each panel slot's zone.

    ``maps[slot]`` has shape (n_configs, n, n) in dBm on a regular grid of the
    zone's local (v, u) coordinates including both edges; sequential codebooks
    have 16 configurations, simultaneous ones a single combined one. All cells
    share the same relative panel geometry, so maps are per slot.
    """

    def __init__(self, layout: Layout, channel: ChannelConfig, ris: RisConfig, codebooks: dict[int, RisCodebook]):
        self.layout = layout
        self.strategy = next(iter(codebooks.values())).strategy
        self.resolution = ris.map_resolution_m
        panels = layout.cells[0].panels
        self.side = panels[0].side
        self.n_sub = panels[0].n_sub
        self.n = int(round(self.side / self.resolution)) + 1
        axis = np.linspace(0.0, self.side, self.n)
        vv, uu = np.meshgrid(axis, axis, indexing="ij")
        uv = np.column_stack([uu.ravel(), vv.ravel()])
        self.maps: dict[int, np.ndarray] = {}
        self.sector_of_slot: dict[int, int] = {}
        for panel in panels:
            cb = codebooks[panel.slot]
            geom = panel_geometry(panel, layout, channel, cb.n_elements)
            h_br = bs_ris_channel(geom, channel)
            e = np.exp(1j * cb.configurations()).T  # (N, n_configs)
            pts = panel.to_world(uv)
            out = []
            for chunk in np.array_split(pts, max(1, len(pts) // 256)):
                coeff = ris_ue_channel(geom, chunk, layout.ue_height, channel) * h_br[None, :]
                out.append(np.abs(coeff @ e) ** 2)
            gain = np.concatenate(out).T.reshape(-1, self.n, self.n)
            self.maps[panel.slot] = (channel.tx_power_dbm + geom.sector_gain_db + tile_gain_db(ris.tile_size)
                                     + 10 * np.log10(gain))
            # sector index within the cell
            self.sector_of_slot[panel.slot] = geom.sector - layout.cells[0].sector_ids[0]
        self.n_slots = len(panels)

    def lookup(self, slot: np.ndarray, config: np.ndarray, uv: np.ndarray) -> np.ndarray:
        """Bilinear RSRP lookup for points in local zone coordinates."""
        out = np.empty(len(slot))
        f = np.clip(uv / self.resolution, 0.0, self.n - 1 - 1e-9)
        i0 = np.floor(f).astype(int)
        t = f - i0
        for s in np.unique(slot):
            m = slot == s
            mp = self.maps[int(s)]
            c = config[m]
            iu, iv = i0[m, 0], i0[m, 1]
            tu, tv = t[m, 0], t[m, 1]
            # interpolate in dB; maps are smooth at this resolution
            out[m] = (
                mp[c, iv, iu] * (1 - tu) * (1 - tv)
                + mp[c, iv, iu + 1] * tu * (1 - tv)
                + mp[c, iv + 1, iu] * (1 - tu) * tv
                + mp[c, iv + 1, iu + 1] * tu * tv
            )
        return out
