"""Command-line entry point: ``ltmsim run|codebook|coverage-map|trace``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import CONFIGURATIONS, CONFIGURATION_NAMES, ConfigError, ScenarioConfig, load_scenario
from .geometry import build_layout
from .kpi import write_run
from .ris import N_BEAMS, coverage_grid, panel_codebook, subzone_mean_powers
from .simulator import Trace, build_power_maps, run_replicate, run_scenario

log = logging.getLogger("ltmsim")


def parse_configs(text: str) -> tuple[int, ...]:
    """``"1..8"``, ``"1,3,5"`` or ``"2"`` to a tuple of configuration indices."""
    out: list[int] = []
    for part in text.replace(" ", ",").split(","):
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    bad = [c for c in out if c not in CONFIGURATIONS]
    if not out or bad:
        raise argparse.ArgumentTypeError(f"configurations must be in 1..8, got {text!r}")
    return tuple(dict.fromkeys(out))


def _load(args) -> ScenarioConfig:
    cfg = load_scenario(args.scenario) if args.scenario else ScenarioConfig()
    sim: dict = {}
    for flag, key in (("seed", "master_seed"), ("duration", "duration_s"), ("ues", "n_ues"),
                      ("replicates", "n_replicates"), ("workers", "workers"), ("configs", "configurations")):
        value = getattr(args, flag, None)
        if value is not None:
            sim[key] = list(value) if flag == "configs" else value
    if sim:
        cfg = cfg.replace(sim=sim)
    if getattr(args, "strategy", None):
        cfg = cfg.replace(ris={"strategy": args.strategy})
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info("config %s: %d UEs, %.0f s, %d replicates, configurations %s", cfg.config_hash(),
             cfg.sim.n_ues, cfg.sim.duration_s, cfg.sim.n_replicates, list(cfg.sim.configurations))
    t0 = time.time()

    def progress(rep):
        log.info("replicate %d done (%.1f s elapsed)", rep.replicate, time.time() - t0)

    result = run_scenario(cfg, progress=progress)
    report = write_run(result, out)
    if not args.no_plots:
        from .plotting import plot_kpis

        plot_kpis(report, out / "kpis.png")
    for c in report.configurations:
        log.info("%d %-20s HO/min %.2f  RLF/min %.3f  PP/min %.3f", c, CONFIGURATION_NAMES[c],
                 report.row(c, "ho_per_min").mean, report.row(c, "rlf_per_min").mean,
                 report.row(c, "pp_per_min").mean)
    print(out / "report.csv")
    return 0


def cmd_codebook(args) -> int:
    cfg = _load(args)
    layout = build_layout(cfg.geometry)
    for panel in layout.cells[0].panels:
        t0 = time.time()
        _, hit = panel_codebook(panel, layout, cfg.channel, cfg.ris, cfg.ris.strategy, use_cache=True)
        log.info("panel slot %d %s: %s (%.1f s)", panel.slot, cfg.ris.strategy,
                 "cache hit" if hit else "built", time.time() - t0)
    return 0


def cmd_coverage(args) -> int:
    cfg = _load(args)
    layout = build_layout(cfg.geometry)
    panel = layout.cells[0].panels[args.slot]
    cb, _ = panel_codebook(panel, layout, cfg.channel, cfg.ris, cfg.ris.strategy, use_cache=True)
    pts, sub, rsrp = coverage_grid(panel, layout, cfg.channel, cb, step=1.0, tile_size=cfg.ris.tile_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    uv = panel.local(pts)
    means = subzone_mean_powers(rsrp, sub)
    with open(out / "coverage_subzones.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sub_zone", "u_index", "v_index", "mean_rsrp_dbm"))
        for i in range(N_BEAMS):
            iv, iu = divmod(i, panel.n_sub)
            w.writerow((i, iu, iv, repr(float(means[i]))))
    with open(out / "coverage_grid.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("u_m", "v_m", "sub_zone", "rsrp_dbm"))
        for (u, v), s, r in zip(uv, sub, rsrp):
            w.writerow((repr(float(u)), repr(float(v)), int(s), repr(float(r))))
    if not args.no_plots:
        from .plotting import plot_coverage

        plot_coverage(uv, rsrp, panel.side, panel.n_sub, out / f"coverage_{cfg.ris.strategy}.png",
                      title=f"{cfg.ris.strategy}, N_r={cfg.ris.n_elements}, mean {np.mean(rsrp):.1f} dBm")
    print(out / "coverage_subzones.csv")
    return 0


def cmd_trace(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace = Trace(channel_ue=args.ue)
    needs_ris = any(CONFIGURATIONS[c][0] for c in cfg.sim.configurations)
    maps = build_power_maps(cfg) if needs_ris else None
    res = run_replicate(cfg, args.replicate, maps, trace)
    for name, rows in (("decisions", trace.decisions), ("channel", trace.channel)):
        with open(out / f"{name}.ndjson", "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, separators=(",", ":")) + "\n")
    (out / "kpis.json").write_text(json.dumps({str(c): k for c, k in res.kpis.items()}, indent=1) + "\n")
    log.info("%d decisions, %d channel rows", len(trace.decisions), len(trace.channel))
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ltmsim", description="RIS-assisted LTM handover simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    subs = p.add_subparsers(dest="command", required=True)

    def common(sp, with_run_flags=True):
        sp.add_argument("scenario", nargs="?", help="scenario YAML (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="master seed")
        if with_run_flags:
            sp.add_argument("--duration", type=float, help="seconds per replicate")
            sp.add_argument("--ues", type=int, help="UEs per replicate")
            sp.add_argument("--replicates", type=int)
            sp.add_argument("--configs", type=parse_configs, help="e.g. 1..8 or 1,3,5")
            sp.add_argument("--workers", type=int)

    sp = subs.add_parser("run", help="simulate a scenario and write the KPI report")
    common(sp)
    sp.add_argument("--out", default="results", help="output directory")
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_run)

    sp = subs.add_parser("codebook", help="precompute and cache RIS codebooks")
    common(sp, with_run_flags=False)
    sp.add_argument("--strategy", choices=("sequential", "simultaneous"))
    sp.set_defaults(func=cmd_codebook)

    sp = subs.add_parser("coverage-map", help="RIS power over one panel's zone as CSV")
    common(sp, with_run_flags=False)
    sp.add_argument("--strategy", choices=("sequential", "simultaneous"))
    sp.add_argument("--slot", type=int, default=0, choices=(0, 1), help="panel slot")
    sp.add_argument("--out", default="coverage")
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_coverage)

    sp = subs.add_parser("trace", help="one replicate with channel and decision dumps")
    common(sp)
    sp.add_argument("--replicate", type=int, default=0)
    sp.add_argument("--ue", type=int, default=0, help="UE whose channel is dumped")
    sp.add_argument("--out", default="trace")
    sp.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"ltmsim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
