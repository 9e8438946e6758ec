"""Device and host latency profiles, plus the key=value config format.

Shipped profiles mirror the three devices the latency model is anchored to:
a mobile UFS part (QD16, LFS-style in-order recovery), a plain TLC SATA SSD
(QD32, in-order write-back, 5% barrier penalty) and the same class of SSD
with power-loss protection. All values are microseconds and are defaults,
not ground truth.

Config files are flat key=value text with [section] headers::

    [device]
    profile = plain-ssd
    queue_depth = 32

    [fs]
    regime = BFS_DR

    [workload]
    kind = dwsl
    ops = 1000
    seed = 7

Any key can also be overridden from the CLI.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

IN_ORDER_WRITEBACK = "in_order_writeback"
TRANSACTIONAL = "transactional"
LFS_RECOVERY = "lfs_recovery"
BARRIER_MODES = (IN_ORDER_WRITEBACK, TRANSACTIONAL, LFS_RECOVERY)

REGIMES = ("EXT4_DR", "EXT4_OD", "BFS_DR", "BFS_OD")


class UsageError(ValueError):
    """Bad profile/regime/workload configuration from the user."""


@dataclass
class DeviceConfig:
    name: str = "plain-ssd"
    queue_depth: int = 32
    t_c_per_4k: int = 20           # DMA latency of a single-block command
    t_blk_extra: int = 1           # added latency per extra 4K block in a command
    t_f: int = 2945                # full writeback-cache flush
    t_eps: int = 22                # flush on a supercap device
    t_fua: int = 2945              # direct-to-surface cost of a FUA write (0 on supercap)
    supercap: bool = False
    barrier_mode: str = IN_ORDER_WRITEBACK
    barrier_overhead_pct: int = 5
    transactional_overhead_pct: int = 0   # optional 12% worst case, default off
    segment_pages: int = 32        # lfs_recovery active-segment size
    evict_interval: int = 0        # 0 -> t_f // 8
    evict_batch: int = 4           # cache entries persisted per eviction tick
    # host-side latencies travel with the profile
    t_d: int = 5                   # dispatch-pass latency
    t_cs: int = 160                # context-switch latency
    retry_interval: int = 3000     # re-dispatch delay when the device is busy
    max_retries: int = 1000
    # fault-injection knobs for mutation testing
    disable_ordered_fence: bool = False

    def __post_init__(self):
        if self.queue_depth < 1:
            raise UsageError("queue_depth must be >= 1")
        if not 0 <= self.barrier_overhead_pct <= 100:
            raise UsageError("barrier_overhead_pct must be in [0, 100]")
        if self.barrier_mode not in BARRIER_MODES:
            raise UsageError(f"unknown barrier_mode {self.barrier_mode!r}")
        if self.evict_interval == 0:
            self.evict_interval = max(1, self.t_f // 8)

    @property
    def flush_latency(self) -> int:
        base = self.t_eps if self.supercap else self.t_f
        if self.barrier_mode == TRANSACTIONAL and self.transactional_overhead_pct:
            base = int(round(base * (1 + self.transactional_overhead_pct / 100)))
        return base

    @property
    def fua_latency(self) -> int:
        return 0 if self.supercap else self.t_fua


def _profiles() -> dict[str, DeviceConfig]:
    return {
        "ufs": DeviceConfig(
            name="ufs", queue_depth=16, t_c_per_4k=70, t_blk_extra=4,
            t_f=292, t_eps=292, t_fua=292, supercap=False,
            barrier_mode=LFS_RECOVERY, barrier_overhead_pct=0,
            segment_pages=32, t_d=39, t_cs=160),
        "plain-ssd": DeviceConfig(
            name="plain-ssd", queue_depth=32, t_c_per_4k=20, t_blk_extra=1,
            t_f=2945, t_eps=2945, t_fua=2945, supercap=False,
            barrier_mode=IN_ORDER_WRITEBACK, barrier_overhead_pct=5,
            t_d=5, t_cs=160),
        "supercap-ssd": DeviceConfig(
            name="supercap-ssd", queue_depth=32, t_c_per_4k=24, t_blk_extra=1,
            t_f=22, t_eps=22, t_fua=0, supercap=True,
            barrier_mode=IN_ORDER_WRITEBACK, barrier_overhead_pct=0,
            t_d=5, t_cs=160),
    }


def profile_names() -> list[str]:
    return sorted(_profiles())


def get_profile(name: str, **overrides) -> DeviceConfig:
    profiles = _profiles()
    if name not in profiles:
        raise UsageError(
            f"unknown profile {name!r}; available: {', '.join(sorted(profiles))}")
    cfg = profiles[name]
    if overrides:
        cfg = replace(cfg, **_coerce(DeviceConfig, overrides))
    return cfg


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _coerce(cls, raw: dict) -> dict:
    """Coerce string config values to the dataclass field types."""
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, val in raw.items():
        if key not in types:
            raise UsageError(f"unknown {cls.__name__} key {key!r}")
        if not isinstance(val, str):
            out[key] = val
            continue
        ftype = types[key]
        if ftype in ("int", int):
            out[key] = int(val)
        elif ftype in ("bool", bool):
            out[key] = _BOOL[val.strip().lower()]
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    device: DeviceConfig = field(default_factory=lambda: get_profile("plain-ssd"))
    regime: str = "BFS_DR"
    workload: str = "rand_write_sync"
    ops: int = 10000
    seed: int = 1
    block_range: int = 32768
    actors: int = 1
    tx: int = 1000                 # sqlite_persist transactions
    durable_tail: bool = True      # sqlite_persist: keep the last sync durable
    allocating: bool = True        # dwsl/rand_write_sync writes allocate
    timer_tick: int = 10000        # inode timestamp granularity
    discipline: str = "fifo"       # inner scheduler order: fifo | random
    trace: bool = False            # collect order trace + device timeline
    # mutation knobs that live above the device
    disable_epoch_blocking: bool = False
    disable_barrier_reassignment: bool = False
    disable_ext4_preflush: bool = False

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise UsageError(f"unknown regime {self.regime!r}; one of {REGIMES}")
        if self.ops < 1:
            raise UsageError("op_count must be >= 1")
        if self.actors < 1:
            raise UsageError("actors must be >= 1")


def load_config(path: str, cli_overrides: dict | None = None) -> RunConfig:
    """Parse a [section] key=value config file into a RunConfig."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise UsageError(f"cannot read config file {path!r}")
    dev_raw = dict(parser.items("device")) if parser.has_section("device") else {}
    fs_raw = dict(parser.items("fs")) if parser.has_section("fs") else {}
    wl_raw = dict(parser.items("workload")) if parser.has_section("workload") else {}
    merged = {**fs_raw, **wl_raw}
    if cli_overrides:
        for key, val in cli_overrides.items():
            if val is None:
                continue
            if key == "profile" or key in {f.name for f in fields(DeviceConfig)}:
                dev_raw[key] = val
            else:
                merged[key] = val
    profile = dev_raw.pop("profile", "plain-ssd")
    device = get_profile(str(profile), **dev_raw)
    merged.setdefault("workload", merged.pop("kind", "rand_write_sync"))
    run_fields = {f.name for f in fields(RunConfig)}
    unknown = set(merged) - run_fields
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    kwargs = _coerce(RunConfig, merged)
    return RunConfig(device=device, **kwargs)
