"""Cycle-stepped multicore simulation and its report.

Each cycle: the bus is stepped (queued grants, deliveries), then every core
in core-id order.  Core-id order is the only tie-break anywhere in the
model, which makes runs bit-deterministic.  When no core did anything in a
cycle the loop jumps straight to the earliest cycle at which some core or
the bus can make progress.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

from .config import MachineConfig, validate_config
from .core import Core, CoreStats
from .errors import SimulationError
from .memhier import MemoryHierarchy

INF = float("inf")
DEFAULT_MAX_CYCLES = 10**10
FORMATS = ("TEXT", "CSV", "JSONL")


@dataclass
class SimReport:
    total_cycles: int = 0
    cores: list[CoreStats] = field(default_factory=list)
    caches: dict[str, dict[str, int]] = field(default_factory=dict)
    bus: dict[str, int] = field(default_factory=lambda: {"messages": 0, "flits": 0,
                                                          "max_queue_depth": 0})
    frequency: int = 2_000_000_000
    wall_seconds: float = 0.0

    @property
    def simulated_seconds(self) -> float:
        return self.total_cycles / self.frequency


class Simulation:
    def __init__(self, cfg: MachineConfig, traces, *, mem=None, predictors=None,
                 mispredict_all: bool = False, observer=None, skip_idle: bool = True,
                 max_cycles: int = DEFAULT_MAX_CYCLES, record_bus: bool = False):
        bad = validate_config(cfg)
        if bad:
            raise SimulationError("BAD_CONFIG", "; ".join(bad))
        traces = list(traces)
        if len(traces) > cfg.num_cores:
            raise SimulationError("TOO_MANY_TRACES",
                                  f"{len(traces)} traces for {cfg.num_cores} cores")
        self.cfg = cfg
        self.mem = mem if mem is not None else MemoryHierarchy(cfg, max(1, len(traces)), record_bus)
        predictors = predictors or [None] * len(traces)
        self.cores = [Core(cfg, t, i, predictors[i], mispredict_all)
                      for i, t in enumerate(traces)]
        self.observer = observer
        self.skip_idle = skip_idle
        self.max_cycles = max_cycles
        self.cycle = 0

    def run(self) -> SimReport:
        t0 = time.perf_counter()
        cores, mem = self.cores, self.mem
        cycle = 0
        while not all(c.done for c in cores):
            if cycle > self.max_cycles:
                raise SimulationError("DIVERGENCE",
                                      f"exceeded {self.max_cycles} cycles; "
                                      + ", ".join(f"core{c.core_id}: {c.stats.retired} retired, "
                                                  f"rob={len(c.rob)}" for c in cores))
            mem.tick(cycle)
            events = [c.step(cycle, mem) for c in cores]
            if self.observer is not None:
                self.observer(cycle, self, events)
            if all(c.done for c in cores):
                break
            nxt = cycle + 1
            if self.skip_idle and not any(ev.active for ev in events):
                nxt = min([c.next_event(cycle) for c in cores] + [mem.next_event(cycle)])
                if nxt == INF:
                    raise SimulationError("DEADLOCK", f"no pending events at cycle {cycle}")
                nxt = int(max(nxt, cycle + 1))
                for c in cores:
                    c.skip(cycle + 1, nxt)
            cycle = nxt
        self.cycle = cycle
        return self.report(time.perf_counter() - t0)

    def report(self, wall: float = 0.0) -> SimReport:
        stats = [c.stats for c in self.cores]
        bus = getattr(self.mem, "bus", None)
        return SimReport(
            total_cycles=max((s.cycles for s in stats), default=0),
            cores=stats,
            caches=self.mem.cache_stats(),
            bus=bus.stats() if bus is not None else {"messages": 0, "flits": 0,
                                                      "max_queue_depth": 0},
            frequency=self.cfg.frequency,
            wall_seconds=wall,
        )


def simulate(cfg: MachineConfig, traces, **kwargs) -> SimReport:
    return Simulation(cfg, traces, **kwargs).run()


# ------------------------------------------------------------------ rendering

def report_rows(r: SimReport, wall_clock: bool = True) -> list[tuple[str, int | None, str, object]]:
    rows: list[tuple[str, int | None, str, object]] = [
        ("machine", None, "total_cycles", r.total_cycles),
        ("machine", None, "num_cores", len(r.cores)),
        ("machine", None, "frequency", r.frequency),
        ("machine", None, "simulated_seconds", r.simulated_seconds),
    ]
    if wall_clock:
        rows.append(("machine", None, "wall_seconds", r.wall_seconds))
    for i, s in enumerate(r.cores):
        rows.extend(("core", i, k, v) for k, v in s.as_dict().items())
    for name in sorted(r.caches):
        core = None
        level = name
        if name.startswith("core"):
            prefix, level = name.split(".", 1)
            core = int(prefix[4:])
        rows.extend(("cache", core, f"{level}.{k}", v) for k, v in r.caches[name].items())
    rows.extend(("bus", None, k, v) for k, v in r.bus.items())
    return rows


def collect_report(r: SimReport, fmt: str = "TEXT", wall_clock: bool = True) -> str:
    fmt = fmt.upper().replace("-", "").replace("_", "")
    if fmt == "JSONLINES":
        fmt = "JSONL"
    rows = report_rows(r, wall_clock)
    if fmt == "CSV":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scope", "core", "metric", "value"])
        for scope, core, metric, value in rows:
            w.writerow([scope, "" if core is None else core, metric, repr(value)
                        if isinstance(value, float) else value])
        return buf.getvalue()
    if fmt == "JSONL":
        return "".join(json.dumps({"scope": s, "core": c, "metric": m, "value": v}) + "\n"
                       for s, c, m, v in rows)
    if fmt == "TEXT":
        out = [f"total_cycles      {r.total_cycles}",
               f"cores             {len(r.cores)}",
               f"simulated_seconds {r.simulated_seconds:.9f}"]
        if wall_clock:
            out.append(f"wall_seconds      {r.wall_seconds:.3f}")
        for i, s in enumerate(r.cores):
            ipc = s.retired / s.cycles if s.cycles else 0.0
            out.append(f"\n[core {i}]  ipc {ipc:.3f}")
            out.extend(f"  {k:32s} {v}" for k, v in s.as_dict().items())
        out.append("\n[caches]")
        for name in sorted(r.caches):
            vals = "  ".join(f"{k}={v}" for k, v in r.caches[name].items())
            out.append(f"  {name:12s} {vals}")
        out.append("\n[bus]")
        out.extend(f"  {k:32s} {v}" for k, v in r.bus.items())
        return "\n".join(out) + "\n"
    raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")


def _num(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_report(text: str, fmt: str = "CSV") -> SimReport:
    """Inverse of ``collect_report`` for the CSV and JSON-lines formats."""
    fmt = fmt.upper().replace("-", "").replace("_", "")
    if fmt == "CSV":
        reader = csv.DictReader(io.StringIO(text))
        rows = [(d["scope"], int(d["core"]) if d["core"] else None, d["metric"], _num(d["value"]))
                for d in reader]
    elif fmt in ("JSONL", "JSONLINES"):
        rows = []
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                rows.append((d["scope"], d["core"], d["metric"], d["value"]))
    else:
        raise ValueError(f"cannot parse {fmt!r} reports")

    r = SimReport(bus={})
    core_rows: dict[int, dict] = {}
    for scope, core, metric, value in rows:
        if scope == "machine":
            if metric in ("total_cycles", "frequency"):
                setattr(r, metric, int(value))
            elif metric == "wall_seconds":
                r.wall_seconds = float(value)
        elif scope == "core":
            core_rows.setdefault(core, {})[metric] = value
        elif scope == "cache":
            level, key = metric.rsplit(".", 1)
            name = level if core is None else f"core{core}.{level}"
            r.caches.setdefault(name, {})[key] = value
        elif scope == "bus":
            r.bus[metric] = value
    r.cores = [CoreStats.from_dict(core_rows[i]) for i in sorted(core_rows)]
    return r
