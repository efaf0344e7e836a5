"""KPI aggregation over replicates, export to CSV/JSON, and event-log replay."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .config import ScenarioConfig, dump_scenario, load_scenario
from .handover import KPI_NAMES, read_event_log, session_kpis, write_event_log

CSV_COLUMNS = ("configuration", "kpi", "mean", "ci95_lo", "ci95_hi", "n_replicates", "config_hash")

KPI_LABELS = {
    "ho_per_min": "HO / min",
    "hof_per_min": "HOF / min",
    "pp_per_min": "PP / min",
    "capacity_bps": "Capacity (bps)",
    "rlf_per_min": "RLF / min",
    "reliability_pct": "Reliability (%)",
    "cell_preps_per_min": "Cell preparations / min",
    "resource_reservation_pct": "Resource reservation (%)",
}


@dataclass(frozen=True)
class KpiRow:
    configuration: int
    kpi: str
    mean: float
    ci95_lo: float
    ci95_hi: float
    n_replicates: int
    config_hash: str


def mean_ci95(values) -> tuple[float, float, float]:
    """Sample mean and two-sided 95% Student-t interval."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no replicate values")
    m = float(np.mean(v))
    if v.size == 1:
        return m, m, m
    half = float(stats.t.ppf(0.975, v.size - 1) * np.std(v, ddof=1) / math.sqrt(v.size))
    return m, m - half, m + half


@dataclass
class KpiReport:
    rows: list[KpiRow]
    # (configuration, kpi) -> per-replicate values, in replicate order
    replicates: dict[tuple[int, str], list[float]] = field(default_factory=dict, compare=False)

    @property
    def config_hash(self) -> str:
        hashes = {r.config_hash for r in self.rows}
        if len(hashes) != 1:
            raise ValueError("report mixes configuration hashes")
        return hashes.pop()

    @property
    def configurations(self) -> list[int]:
        return sorted({r.configuration for r in self.rows})

    def row(self, configuration: int, kpi: str) -> KpiRow:
        for r in self.rows:
            if r.configuration == configuration and r.kpi == kpi:
                return r
        raise KeyError((configuration, kpi))

    @classmethod
    def from_values(cls, values: dict[tuple[int, str], list[float]], config_hash: str) -> "KpiReport":
        rows = []
        for (c, k) in sorted(values, key=lambda ck: (ck[0], KPI_NAMES.index(ck[1]))):
            m, lo, hi = mean_ci95(values[(c, k)])
            rows.append(KpiRow(c, k, m, lo, hi, len(values[(c, k)]), config_hash))
        return cls(rows, {key: list(map(float, v)) for key, v in values.items()})

    @classmethod
    def from_scenario(cls, result) -> "KpiReport":
        cfg = result.config
        values = {
            (c, k): [rep.kpis[c][k] for rep in result.replicates]
            for c in cfg.sim.configurations for k in KPI_NAMES
        }
        return cls.from_values(values, cfg.config_hash())

    # -- serialization -------------------------------------------------------

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([r.configuration, r.kpi, repr(r.mean), repr(r.ci95_lo), repr(r.ci95_hi),
                            r.n_replicates, r.config_hash])

    @classmethod
    def from_csv(cls, path) -> "KpiReport":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
                raise ValueError(f"unexpected CSV header {reader.fieldnames}")
            rows = [KpiRow(int(d["configuration"]), d["kpi"], float(d["mean"]), float(d["ci95_lo"]),
                           float(d["ci95_hi"]), int(d["n_replicates"]), d["config_hash"]) for d in reader]
        return cls(rows)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps({"rows": [asdict(r) for r in self.rows]}, indent=1) + "\n")

    @classmethod
    def from_json(cls, path) -> "KpiReport":
        data = json.loads(Path(path).read_text())
        return cls([KpiRow(**d) for d in data["rows"]])

    def replicates_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("configuration", "replicate", "kpi", "value"))
            for (c, k) in sorted(self.replicates, key=lambda ck: (ck[0], KPI_NAMES.index(ck[1]))):
                for i, v in enumerate(self.replicates[(c, k)]):
                    w.writerow([c, i, k, repr(v)])


def lower_with_ci(report: KpiReport, a: int, b: int, kpi: str) -> bool:
    """True when configuration ``a``'s 95% interval lies entirely below ``b``'s."""
    return report.row(a, kpi).ci95_hi < report.row(b, kpi).ci95_lo


# -- run directories ----------------------------------------------------------


def _event_path(out: Path, rep: int, c: int) -> Path:
    return out / "events" / f"rep{rep:03d}_cfg{c}.ndjson"


def write_run(result, out_dir) -> KpiReport:
    """Write report.csv/json, per-replicate values, event logs and the replay sidecar.

    The sidecar (``runs.json``) holds what the event log cannot: the span of
    each replicate and the per-UE mean throughput.
    """
    out = Path(out_dir)
    (out / "events").mkdir(parents=True, exist_ok=True)
    cfg = result.config
    report = KpiReport.from_scenario(result)
    report.to_csv(out / "report.csv")
    report.to_json(out / "report.json")
    report.replicates_to_csv(out / "replicates.csv")
    dump_scenario(cfg, out / "scenario.yaml")
    runs = []
    for rep in result.replicates:
        for c in cfg.sim.configurations:
            write_event_log(rep.events[c], _event_path(out, rep.replicate, c))
        runs.append({
            "replicate": rep.replicate,
            "n_ticks": rep.n_ticks,
            "max_prepared": rep.max_prepared,
            "capacity_bps": {str(c): [float(x) for x in rep.capacity[c]] for c in cfg.sim.configurations},
        })
    sidecar = {"config_hash": cfg.config_hash(), "runs": runs}
    (out / "runs.json").write_text(json.dumps(sidecar, indent=1) + "\n")
    return report


def replay_run(out_dir) -> KpiReport:
    """Recompute the report of a run directory from its event logs and sidecar."""
    out = Path(out_dir)
    cfg: ScenarioConfig = load_scenario(out / "scenario.yaml")
    sidecar = json.loads((out / "runs.json").read_text())
    if sidecar["config_hash"] != cfg.config_hash():
        raise ValueError("scenario file does not match the run's config hash")
    values: dict[tuple[int, str], list[float]] = {(c, k): [] for c in cfg.sim.configurations for k in KPI_NAMES}
    for run in sidecar["runs"]:
        for c in cfg.sim.configurations:
            events = read_event_log(_event_path(out, run["replicate"], c))
            kp = session_kpis(events, cfg.sim.n_ues, run["n_ticks"], cfg.sim.tick_ms,
                              np.array(run["capacity_bps"][str(c)]), cfg.handover)
            for k in KPI_NAMES:
                values[(c, k)].append(kp[k])
    return KpiReport.from_values(values, cfg.config_hash())
