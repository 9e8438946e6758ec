"""Run reports: IOPS, latency percentiles, queue depth, context switches.

Field order is stable across text/json/csv so figure-reproduction scripts
can diff emitted files between runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

from .workloads import SimResult

REPORT_FIELDS = ("profile", "regime", "workload", "ops", "seed", "iops",
                 "lat_mean_us", "lat_median_us", "lat_p99_us", "lat_p999_us",
                 "lat_p9999_us", "mean_qd", "max_qd", "ctx_switches_per_op",
                 "commit_interval_us", "flushes", "sim_time_us")


def percentile(sorted_vals: list[int], q: float) -> int:
    """Nearest-rank percentile over a pre-sorted sample."""
    if not sorted_vals:
        return 0
    n = len(sorted_vals)
    idx = min(n - 1, max(0, math.ceil(q * n) - 1))
    return sorted_vals[idx]


@dataclass
class Report:
    profile: str
    regime: str
    workload: str
    ops: int
    seed: int
    iops: float
    lat_mean_us: float
    lat_median_us: int
    lat_p99_us: int
    lat_p999_us: int
    lat_p9999_us: int
    mean_qd: float
    max_qd: int
    ctx_switches_per_op: float
    commit_interval_us: float
    flushes: int
    sim_time_us: int

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        lines = [f"{k} = {v}" for k, v in self.as_dict().items()]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2) + "\n"

    @staticmethod
    def csv_header() -> str:
        return ",".join(REPORT_FIELDS)

    def to_csv_row(self) -> str:
        return ",".join(str(self.as_dict()[k]) for k in REPORT_FIELDS)


def make_report(res: SimResult) -> Report:
    lats = sorted(res.sync_latencies())
    ops = max(1, res.ops)
    commit_gaps = [b - a for a, b in zip(res.fs.commit_times,
                                         res.fs.commit_times[1:])]
    mean_gap = sum(commit_gaps) / len(commit_gaps) if commit_gaps else 0.0
    seconds = res.last_io_at / 1e6
    return Report(
        profile=res.cfg.device.name,
        regime=res.cfg.regime,
        workload=res.cfg.workload,
        ops=res.ops,
        seed=res.cfg.seed,
        iops=round(res.ops / seconds, 3) if seconds > 0 else 0.0,
        lat_mean_us=round(sum(lats) / len(lats), 3) if lats else 0.0,
        lat_median_us=percentile(lats, 0.50),
        lat_p99_us=percentile(lats, 0.99),
        lat_p999_us=percentile(lats, 0.999),
        lat_p9999_us=percentile(lats, 0.9999),
        mean_qd=round(res.device.mean_qd(), 4),
        max_qd=res.device.max_qd,
        ctx_switches_per_op=round(res.app_switches() / ops, 4),
        commit_interval_us=round(mean_gap, 3),
        flushes=res.device.flush_count,
        sim_time_us=res.sim.now(),
    )


def emit(report: Report, fmt: str, path: str | None = None) -> str:
    if fmt == "text":
        out = report.to_text()
    elif fmt == "json":
        out = report.to_json()
    elif fmt == "csv":
        out = Report.csv_header() + "\n" + report.to_csv_row() + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path:
        with open(path, "w") as f:
            f.write(out)
    return out


def qd_series_csv(res: SimResult, path: str) -> None:
    """Queue-depth time series (t_us, depth) for external plotting."""
    with open(path, "w") as f:
        f.write("t_us,depth\n")
        for t, depth in res.device.qd_series:
            f.write(f"{t},{depth}\n")
