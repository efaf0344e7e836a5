"""Link-level channel: UMa-LOS path loss, sector pattern, shadowing, Jakes fading.

Direct gNB->UE links carry log-normal shadowing and Rayleigh fading; the
cascaded gNB->RIS->UE path is deterministic (see :mod:`ltmsim.ris`).
All powers are dBm unless a name says ``_mw`` (linear milliwatts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ChannelConfig
from .geometry import Layout, zone_lookup

SPEED_OF_LIGHT = 299_792_458.0


def path_loss_db(distance_3d, fc_ghz: float, h_bs: float = 25.0, h_ut: float = 1.5):
    """TR 38.901 UMa line-of-sight path loss in dB.

    Below the breakpoint distance ``28 + 22 log10(d) + 20 log10(fc)``; beyond
    it the 40 log10(d) branch. Distances under 10 m are outside the model.
    """
    d = np.asarray(distance_3d, dtype=float)
    if np.any(d < 10.0):
        raise ValueError("UMa path loss is only defined for distances >= 10 m")
    if fc_ghz <= 0:
        raise ValueError("carrier frequency must be positive")
    d_bp = 4.0 * (h_bs - 1.0) * (h_ut - 1.0) * fc_ghz * 1e9 / SPEED_OF_LIGHT
    pl1 = 28.0 + 22.0 * np.log10(d) + 20.0 * math.log10(fc_ghz)
    if d_bp <= 0:
        return pl1 if pl1.ndim else float(pl1)
    pl2 = (
        28.0
        + 40.0 * np.log10(d)
        + 20.0 * math.log10(fc_ghz)
        - 9.0 * math.log10(d_bp**2 + (h_bs - h_ut) ** 2)
    )
    out = np.where(d <= d_bp, pl1, pl2)
    return out if out.ndim else float(out)


def sector_gain_db(
    azimuth_offset,
    elevation_offset=0.0,
    beamwidth: float = 65.0,
    max_attenuation: float = 30.0,
    element_gain: float = 3.0,
):
    """3GPP parabolic sector pattern plus element gain, in dBi."""
    az = np.asarray(azimuth_offset, dtype=float)
    el = np.asarray(elevation_offset, dtype=float)
    a_h = -np.minimum(12.0 * (az / beamwidth) ** 2, max_attenuation)
    a_v = -np.minimum(12.0 * (el / beamwidth) ** 2, max_attenuation)
    out = element_gain - np.minimum(-(a_h + a_v), max_attenuation)
    return out if out.ndim else float(out)


def wrap_degrees(a):
    """Map angles to (-180, 180]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + 180.0, 360.0) - 180.0
    return np.where(w == -180.0, 180.0, w)


def noise_power_dbm(bandwidth_hz: float, psd_dbm_hz: float = -174.0) -> float:
    return psd_dbm_hz + 10.0 * math.log10(bandwidth_hz)


def db2lin(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def lin2db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def link_budget_dbm(tx_power_dbm, gain_db, path_loss, shadowing_db=0.0, fading_db=0.0, obstruction_db=0.0):
    return tx_power_dbm + gain_db - path_loss - shadowing_db + fading_db - obstruction_db


def sinr_db(signal_mw, interference_mw, noise_mw):
    return lin2db(np.asarray(signal_mw) / (np.asarray(interference_mw) + noise_mw))


@dataclass
class CascadedLink:
    h_br: np.ndarray
    h_ru: np.ndarray
    theta: np.ndarray


def cascaded_gain(link: CascadedLink) -> complex:
    """Effective scalar gain ``sum_i h_ru[i] exp(j theta[i]) h_br[i]`` of a diagonal RIS."""
    h_br = np.asarray(link.h_br)
    h_ru = np.asarray(link.h_ru)
    theta = np.asarray(link.theta, dtype=float)
    if not (h_br.shape == h_ru.shape == theta.shape):
        raise ValueError(f"length mismatch: {h_br.shape}, {h_ru.shape}, {theta.shape}")
    return complex(np.sum(h_ru * np.exp(1j * theta) * h_br))


class JakesFading:
    """Sum-of-sinusoids Rayleigh fading, one process per link.

    Arrival angles follow the Zheng-Xiao layout ``(2 pi n - pi + theta) / N``
    with a random rotation ``theta`` per link, plus random initial phases, so
    ``E|g|^2 = 1`` and the autocorrelation approaches ``J0(2 pi f_D tau)``.
    """

    def __init__(self, n_links: int, n_osc: int, rng: np.random.Generator):
        self.n_links = n_links
        self.n_osc = n_osc
        rot = rng.uniform(-np.pi, np.pi, size=(n_links, 1))
        n = np.arange(1, n_osc + 1)
        self.cos_alpha = np.cos((2 * np.pi * n - np.pi + rot) / n_osc)
        self.phase0 = rng.uniform(-np.pi, np.pi, size=(n_links, n_osc))
        self._z = np.exp(1j * self.phase0)
        self._rot = None
        self._rot_key = None

    def at(self, t, doppler_hz) -> np.ndarray:
        """Gains for constant Doppler at times ``t``; shape (n_links, len(t))."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        fd = np.broadcast_to(np.asarray(doppler_hz, dtype=float), (self.n_links,))
        w = 2 * np.pi * fd[:, None] * self.cos_alpha  # (L, N)
        ph = self.phase0[:, :, None] + w[:, :, None] * t[None, None, :]
        return np.exp(1j * ph).sum(axis=1) / math.sqrt(self.n_osc)

    def current(self) -> np.ndarray:
        return self._z.sum(axis=1) / math.sqrt(self.n_osc)

    def advance(self, dt: float, doppler_hz: np.ndarray) -> np.ndarray:
        """Step every link by ``dt`` seconds and return the new gains."""
        fd = np.asarray(doppler_hz, dtype=float)
        if self._rot is None or not np.array_equal(fd, self._rot_key):
            if self._rot is None:
                self._rot = np.exp(1j * 2 * np.pi * fd[:, None] * self.cos_alpha * dt)
            else:
                changed = fd != self._rot_key
                self._rot[changed] = np.exp(1j * 2 * np.pi * fd[changed, None] * self.cos_alpha[changed] * dt)
            self._rot_key = fd.copy()
        self._z *= self._rot
        return self.current()


class ShadowingField:
    """Log-normal shadowing per (UE, site) with exponential spatial correlation.

    Gudmundson first-order model driven by the distance each UE travels.
    """

    def __init__(self, n_ues: int, n_sites: int, std_db: float, decorrelation_m: float, rng: np.random.Generator):
        self.std = std_db
        self.d_corr = decorrelation_m
        self.rng = rng
        self.values = rng.normal(0.0, std_db, size=(n_ues, n_sites))

    def advance(self, step_m: np.ndarray) -> np.ndarray:
        rho = np.exp(-np.asarray(step_m, dtype=float) / self.d_corr)[:, None]
        innov = self.rng.normal(0.0, self.std, size=self.values.shape)
        self.values = rho * self.values + np.sqrt(1.0 - rho**2) * innov
        return self.values


class ChannelState:
    """Per-replicate channel processes for ``n_ues`` UEs against every sector.

    Call :meth:`advance` once per tick with the UE positions; it returns the
    direct-link RSRP matrix of shape (n_ues, n_sectors).
    """

    def __init__(self, layout: Layout, config: ChannelConfig, n_ues: int, rng_seed: int | np.random.SeedSequence):
        self.layout = layout
        self.config = config
        self.n_ues = n_ues
        ss = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
        shadow_ss, fading_ss = ss.spawn(2)
        self.rng_seed = rng_seed
        self.shadowing = ShadowingField(
            n_ues, layout.n_sites, config.shadowing_std_db, config.shadowing_decorrelation_m,
            np.random.default_rng(shadow_ss),
        )
        self.fading = JakesFading(n_ues * layout.n_sectors, config.fading_oscillators, np.random.default_rng(fading_ss))
        self.wavelength = SPEED_OF_LIGHT / (config.carrier_ghz * 1e9)
        self.noise_dbm = noise_power_dbm(config.bandwidth_mhz * 1e6, config.noise_psd_dbm_hz)
        self.noise_mw = 10 ** (self.noise_dbm / 10)
        self._last_xy = None
        self.fading_db = np.zeros((n_ues, layout.n_sectors))
        self.panel_of_ue = np.full(n_ues, -1)
        self.subzone_of_ue = np.full(n_ues, -1)
        panel_site = np.array([p.cell_id for p in layout.panels], dtype=int)
        self._panel_site = panel_site

    def doppler_hz(self, speeds_mps: np.ndarray) -> np.ndarray:
        return np.asarray(speeds_mps) / self.wavelength

    def mean_rsrp_dbm(self, xy: np.ndarray, obstruction: bool = True) -> np.ndarray:
        """RSRP without shadowing or fading, (n_points, n_sectors)."""
        lay, c = self.layout, self.config
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        diff = xy[:, None, :] - lay.site_xy[None, :, :]
        d2 = np.hypot(diff[..., 0], diff[..., 1])
        dh = lay.bs_height - lay.ue_height
        d3 = np.sqrt(d2**2 + dh**2)
        pl = path_loss_db(d3, c.carrier_ghz, lay.bs_height, lay.ue_height)
        az = np.degrees(np.arctan2(diff[..., 1], diff[..., 0]))
        elev = np.degrees(np.arctan2(dh, d2))
        s_site = lay.sector_site
        az_off = wrap_degrees(az[:, s_site] - lay.sector_boresight_deg[None, :])
        el_off = elev[:, s_site] - c.downtilt_deg
        gain = sector_gain_db(az_off, el_off, c.beamwidth_deg, c.max_attenuation_db, c.element_gain_dbi)
        rsrp = c.tx_power_dbm + gain - pl[:, s_site]
        if obstruction:
            rsrp = rsrp - self.obstruction_db(xy)
        return rsrp

    def obstruction_db(self, xy: np.ndarray) -> np.ndarray:
        lay, c = self.layout, self.config
        panel, sub = zone_lookup(xy, lay)
        in_zone = panel >= 0
        if c.obstruction_scope == "all":
            mask = np.repeat(in_zone[:, None], lay.n_sectors, axis=1)
        else:
            owner = np.where(in_zone, self._panel_site[np.maximum(panel, 0)], -1)
            mask = lay.sector_site[None, :] == owner[:, None]
        return np.where(mask, c.obstruction_db, 0.0)

    def advance(self, xy: np.ndarray, speeds_mps: np.ndarray, dt: float) -> np.ndarray:
        """Move the channel processes to the new UE positions; returns direct RSRP (dBm)."""
        lay = self.layout
        xy = np.asarray(xy, dtype=float)
        if self._last_xy is None:
            step = np.zeros(self.n_ues)
        else:
            step = np.hypot(*(xy - self._last_xy).T)
            self.shadowing.advance(step)
        self._last_xy = xy.copy()
        fd = np.repeat(self.doppler_hz(speeds_mps), lay.n_sectors)
        g = self.fading.advance(dt, fd).reshape(self.n_ues, lay.n_sectors)
        self.fading_db = lin2db(np.abs(g) ** 2)
        self.panel_of_ue, self.subzone_of_ue = zone_lookup(xy, lay)
        mean = self.mean_rsrp_dbm(xy)
        return mean - self.shadowing.values[:, lay.sector_site] + self.fading_db


def sinr_matrix_db(signal_mw: np.ndarray, rx_mw: np.ndarray, layout: Layout, noise_mw: float) -> np.ndarray:
    """SINR of every (UE, sector) pair if that sector served the UE.

    ``rx_mw`` is the received power of every sector's transmission (the
    interference it causes elsewhere); ``signal_mw`` is the useful power when
    serving, which may include a RIS path. Interference comes only from other
    sectors of the same reuse group.
    """
    groups = layout.sector_group
    n_groups = int(groups.max()) + 1
    group_tot = np.zeros((rx_mw.shape[0], n_groups))
    for g in range(n_groups):
        group_tot[:, g] = rx_mw[:, groups == g].sum(axis=1)
    interference = group_tot[:, groups] - rx_mw
    np.maximum(interference, 0.0, out=interference)
    return lin2db(signal_mw / (interference + noise_mw))


def spectral_efficiency(sinr_db_values, cap: float) -> np.ndarray:
    """Shannon efficiency in bit/s/Hz, capped at the top MCS."""
    return np.minimum(np.log2(1.0 + db2lin(sinr_db_values)), cap)
