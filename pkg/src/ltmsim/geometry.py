"""Hexagonal 7-cell layout, RIS panels with their coverage zones, and UE mobility."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import GeometryConfig, MobilityConfig

SECTORS_PER_CELL = 3
SECTOR_BORESIGHTS_DEG = (0.0, 120.0, 240.0)


@dataclass(frozen=True)
class RisPanel:
    """A RIS panel and the square zone it serves.

    The panel sits on the outer corner of its zone; ``direction`` points from
    the panel into the zone along each axis (+1 or -1). Local zone coordinates
    ``(u, v)`` are measured from the panel corner along those directions.
    """

    panel_id: int
    cell_id: int
    slot: int  # index among the cell's panels
    position: tuple[float, float]
    direction: tuple[int, int]
    side: float = 40.0
    n_sub: int = 4

    @property
    def sub_side(self) -> float:
        return self.side / self.n_sub

    def local(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        p = np.asarray(self.position)
        d = np.asarray(self.direction, dtype=float)
        return (xy - p) * d

    def to_world(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return np.asarray(self.position) + uv * np.asarray(self.direction, dtype=float)

    def sub_zone(self, xy: np.ndarray) -> np.ndarray:
        """Sub-zone index in [0, n_sub**2) for each point, -1 outside the zone."""
        uv = self.local(xy)
        inside = (uv >= 0.0).all(axis=-1) & (uv < self.side).all(axis=-1)
        iu = np.clip(np.floor(uv[..., 0] / self.sub_side), 0, self.n_sub - 1).astype(int)
        iv = np.clip(np.floor(uv[..., 1] / self.sub_side), 0, self.n_sub - 1).astype(int)
        return np.where(inside, iv * self.n_sub + iu, -1)

    def grid_points(self, sub_zone: int | None = None, step: float = 1.0) -> np.ndarray:
        """Centres of the ``step``-metre grid cells, world coordinates.

        With ``sub_zone`` given, only that sub-zone's points (100 for the
        default 10 m sub-zone on a 1 m grid), ordered row-major in (v, u).
        """
        if sub_zone is None:
            lo_u = lo_v = 0.0
            extent = self.side
        else:
            iv, iu = divmod(sub_zone, self.n_sub)
            lo_u, lo_v = iu * self.sub_side, iv * self.sub_side
            extent = self.sub_side
        n = int(round(extent / step))
        c = (np.arange(n) + 0.5) * step
        vv, uu = np.meshgrid(lo_v + c, lo_u + c, indexing="ij")
        uv = np.stack([uu.ravel(), vv.ravel()], axis=-1)
        return self.to_world(uv)

    def to_dict(self) -> dict:
        return {
            "panel_id": self.panel_id,
            "cell_id": self.cell_id,
            "slot": self.slot,
            "position": list(self.position),
            "direction": list(self.direction),
            "side": self.side,
            "n_sub": self.n_sub,
        }


@dataclass(frozen=True)
class CellSite:
    cell_id: int
    center: tuple[float, float]
    sector_ids: tuple[int, ...]
    panels: tuple[RisPanel, ...]


@dataclass(frozen=True)
class Layout:
    cells: tuple[CellSite, ...]
    inter_site_distance: float
    reuse_factor: int
    hex_circumradius: float
    bs_height: float = 25.0
    ue_height: float = 1.5
    ris_height: float = 10.0
    # derived arrays, filled in __post_init__
    site_xy: np.ndarray = field(init=False, repr=False, compare=False)
    sector_site: np.ndarray = field(init=False, repr=False, compare=False)
    sector_boresight_deg: np.ndarray = field(init=False, repr=False, compare=False)
    sector_group: np.ndarray = field(init=False, repr=False, compare=False)
    panel_xy: np.ndarray = field(init=False, repr=False, compare=False)
    panel_dir: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        site_xy = np.array([c.center for c in self.cells], dtype=float)
        n = len(self.cells) * SECTORS_PER_CELL
        sector_site = np.repeat(np.arange(len(self.cells)), SECTORS_PER_CELL)
        k = np.tile(np.arange(SECTORS_PER_CELL), len(self.cells))
        bore = np.asarray(SECTOR_BORESIGHTS_DEG)[k]
        # co-oriented sectors share a group; reuse 1 puts everything in group 0
        group = k % self.reuse_factor if self.reuse_factor > 1 else np.zeros(n, dtype=int)
        for name, arr in [
            ("site_xy", site_xy),
            ("sector_site", sector_site),
            ("sector_boresight_deg", bore),
            ("sector_group", group),
            ("panel_xy", np.array([p.position for c in self.cells for p in c.panels], dtype=float).reshape(-1, 2)),
            ("panel_dir", np.array([p.direction for c in self.cells for p in c.panels], dtype=float).reshape(-1, 2)),
        ]:
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_sites(self) -> int:
        return len(self.cells)

    @property
    def n_sectors(self) -> int:
        return len(self.cells) * SECTORS_PER_CELL

    @property
    def panels(self) -> tuple[RisPanel, ...]:
        return tuple(p for c in self.cells for p in c.panels)

    def bounds(self) -> tuple[float, float, float, float]:
        """Mobility region: bounding box of the site centres (a single cell uses its hexagon's box)."""
        if self.n_sites == 1:
            r = self.hex_circumradius
            x0, y0 = self.cells[0].center
            return (x0 - r * math.sqrt(3) / 2, x0 + r * math.sqrt(3) / 2, y0 - r, y0 + r)
        xy = self.site_xy
        return (xy[:, 0].min(), xy[:, 0].max(), xy[:, 1].min(), xy[:, 1].max())

    def hex_area(self) -> float:
        return 1.5 * math.sqrt(3) * self.hex_circumradius**2

    def ris_area_fraction(self) -> float:
        """Share of one cell's hexagon covered by its RIS zones."""
        zones = sum(p.side**2 for p in self.cells[0].panels)
        return zones / self.hex_area()

    def to_dict(self) -> dict:
        return {
            "inter_site_distance": self.inter_site_distance,
            "reuse_factor": self.reuse_factor,
            "hex_circumradius": self.hex_circumradius,
            "bs_height": self.bs_height,
            "ue_height": self.ue_height,
            "ris_height": self.ris_height,
            "cells": [
                {
                    "cell_id": c.cell_id,
                    "center": list(c.center),
                    "sector_ids": list(c.sector_ids),
                    "panels": [p.to_dict() for p in c.panels],
                }
                for c in self.cells
            ],
        }


def build_layout(config: GeometryConfig | None = None) -> Layout:
    """Seven hexagonal cells: one at the origin and six at ``inter_site_distance``.

    Neighbour ``i`` sits at angle ``60 * i`` degrees, so neighbour 1 is on the
    positive x axis.
    """
    config = config or GeometryConfig()
    isd = config.inter_site_distance_m
    if not isd > 0:
        raise ValueError(f"inter-site distance must be positive, got {isd}")
    if config.n_cells not in (1, 7):
        raise ValueError(f"unsupported cell count {config.n_cells}; expected 1 or 7")
    centers = [(0.0, 0.0)]
    for i in range(config.n_cells - 1):
        a = math.radians(60.0 * i)
        centers.append((isd * math.cos(a), isd * math.sin(a)))
    radius = config.hex_circumradius_m or isd / math.sqrt(3)
    cells = []
    for cid, (cx, cy) in enumerate(centers):
        panels = []
        for slot, (ox, oy) in enumerate(config.ris_offsets_m):
            # zone extends from the panel towards the cell centre
            direction = (1 if ox < 0 else -1, 1 if oy < 0 else -1)
            panels.append(
                RisPanel(
                    panel_id=len(config.ris_offsets_m) * cid + slot,
                    cell_id=cid,
                    slot=slot,
                    position=(cx + ox, cy + oy),
                    direction=direction,
                    side=config.zone_side_m,
                    n_sub=config.subzones_per_side,
                )
            )
        sectors = tuple(SECTORS_PER_CELL * cid + k for k in range(SECTORS_PER_CELL))
        cells.append(CellSite(cid, (cx, cy), sectors, tuple(panels)))
    return Layout(
        cells=tuple(cells),
        inter_site_distance=isd,
        reuse_factor=config.reuse_factor,
        hex_circumradius=radius,
        bs_height=config.bs_height_m,
        ue_height=config.ue_height_m,
        ris_height=config.ris_height_m,
    )


def in_ris_zone(position, layout: Layout) -> tuple[int, int, int] | None:
    """(cell id, panel id, sub-zone index) of the zone covering ``position``, or None."""
    xy = np.asarray(position, dtype=float)
    for panel in layout.panels:
        sz = int(panel.sub_zone(xy))
        if sz >= 0:
            return panel.cell_id, panel.panel_id, sz
    return None


def zone_lookup(xy: np.ndarray, layout: Layout) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised zone membership: (panel id or -1, sub-zone or -1) per point.

    Assumes every panel shares the same zone side and sub-zone count; panel ids
    follow ``layout.panels`` order.
    """
    xy = np.asarray(xy, dtype=float)
    shape = xy.shape[:-1]
    pts = xy.reshape(-1, 2)
    if not layout.panels:
        return np.full(shape, -1), np.full(shape, -1)
    ref = layout.panels[0]
    uv = (pts[:, None, :] - layout.panel_xy[None]) * layout.panel_dir[None]
    inside = ((uv >= 0.0) & (uv < ref.side)).all(axis=-1)
    hit = inside.any(axis=1)
    k = np.argmax(inside, axis=1)
    ids = np.array([p.panel_id for p in layout.panels])
    panel = np.where(hit, ids[k], -1)
    uvk = uv[np.arange(len(pts)), k]
    cell = np.clip(np.floor(uvk / ref.sub_side), 0, ref.n_sub - 1).astype(int)
    sub = np.where(hit, cell[:, 1] * ref.n_sub + cell[:, 0], -1)
    return panel.reshape(shape), sub.reshape(shape)


@dataclass(frozen=True)
class Trajectory:
    """UE path sampled at the simulation tick.

    ``positions`` has shape (n_samples, 2); ``speeds`` holds the segment speed
    in m/s at each sample. ``segments`` lists (start sample, speed, heading).
    """

    positions: np.ndarray
    speeds: np.ndarray
    tick_s: float
    segments: tuple[tuple[int, float, float], ...]

    @property
    def n_samples(self) -> int:
        return len(self.positions)

    def to_dict(self) -> dict:
        return {
            "tick_s": self.tick_s,
            "positions": self.positions.tolist(),
            "speeds": self.speeds.tolist(),
            "segments": [list(s) for s in self.segments],
        }


def _fold(x: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Reflect coordinates into [lo, hi]; also returns the velocity sign after folding."""
    span = hi - lo
    y = np.mod(x - lo, 2 * span)
    back = y > span
    return lo + np.where(back, 2 * span - y, y), np.where(back, -1.0, 1.0)


def generate_trajectory(
    seed: int,
    duration: float,
    layout: Layout,
    tick: float = 0.01,
    mobility: MobilityConfig | None = None,
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Random-direction walk with boundary reflection.

    Each segment draws a duration, a heading and a speed uniformly; the UE
    moves in a straight line at that speed and reflects off the edges of
    ``layout.bounds()``. ``rng`` overrides ``seed`` when given.
    """
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    mobility = mobility or MobilityConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    x0, x1, y0, y1 = layout.bounds()
    n = int(round(duration / tick)) + 1
    pos = np.empty((n, 2))
    speeds = np.empty(n)
    pos[0] = rng.uniform([x0, y0], [x1, y1])
    segments = []
    i = 0
    vmin, vmax = mobility.speed_min_kmh / 3.6, mobility.speed_max_kmh / 3.6
    while i < n - 1:
        seg_len = rng.uniform(mobility.segment_min_s, mobility.segment_max_s)
        heading = rng.uniform(0.0, 2 * np.pi)
        speed = rng.uniform(vmin, vmax)
        steps = max(1, int(round(seg_len / tick)))
        steps = min(steps, n - 1 - i)
        segments.append((i, float(speed), float(heading)))
        k = np.arange(1, steps + 1)
        raw_x = pos[i, 0] + speed * np.cos(heading) * tick * k
        raw_y = pos[i, 1] + speed * np.sin(heading) * tick * k
        pos[i + 1 : i + steps + 1, 0], _ = _fold(raw_x, x0, x1)
        pos[i + 1 : i + steps + 1, 1], _ = _fold(raw_y, y0, y1)
        speeds[i : i + steps] = speed
        i += steps
    speeds[-1] = speeds[-2] if n > 1 else vmin
    return Trajectory(pos, speeds, tick, tuple(segments))
