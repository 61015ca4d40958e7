"""Machine description: pipeline, functional units, caches, NOC, predictor.

Config files are sectioned key/value text::

    [machine]
    num_cores = 12
    [pipeline]
    rob_size = 168
    [fu.int_div]
    latency = 21
    [cache.l3]
    size = 15MB        # kB / MB suffixes are powers of two
    [predictor]
    history_lengths = 5, 15, 44, 130

Every key present is applied over ``default_sandybridge()``.
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
import re
from dataclasses import dataclass, field, replace

from .branch_predictor import TageConfig
from .errors import ConfigError
from .trace import NUM_ARCH_REGS


class FuKind(str, enum.Enum):
    INT_ALU = "INT_ALU"
    INT_MUL = "INT_MUL"
    INT_DIV = "INT_DIV"
    FP_ALU = "FP_ALU"
    FP_MUL = "FP_MUL"
    FP_DIV = "FP_DIV"


class CacheLevelName(str, enum.Enum):
    L1I = "L1I"
    L1D = "L1D"
    L2 = "L2"
    L3 = "L3"


class WriteMode(str, enum.Enum):
    WRITE_THROUGH = "WRITE_THROUGH"
    WRITE_BACK = "WRITE_BACK"


class Topology(str, enum.Enum):
    BUS = "BUS"


@dataclass(frozen=True)
class PipelineConfig:
    retire_width: int = 4
    issue_width: int = 6
    rob_size: int = 168
    iw_size: int = 54
    load_queue_size: int = 64
    store_queue_size: int = 64
    int_phys_regs: int = 160
    fp_phys_regs: int = 144
    bmispred_penalty: int = 8
    frontend_depth: int = 5
    itlb_entries: int = 128
    dtlb_entries: int = 128
    tlb_miss_penalty: int = 30


@dataclass(frozen=True)
class FunctionalUnitSpec:
    kind: FuKind
    count: int
    latency: int
    recip_throughput: int


@dataclass(frozen=True)
class CacheConfig:
    level: CacheLevelName
    size: int
    block_size: int = 64
    associativity: int = 8
    latency: int = 1
    write_mode: WriteMode = WriteMode.WRITE_BACK
    shared: bool = False

    @property
    def num_sets(self) -> int:
        return self.size // (self.block_size * self.associativity)


@dataclass(frozen=True)
class NocConfig:
    topology: Topology = Topology.BUS
    hop_latency: int = 1
    flit_size: int = 32


def _default_fus() -> dict[FuKind, FunctionalUnitSpec]:
    rows = [
        (FuKind.INT_ALU, 3, 1, 1),
        (FuKind.INT_MUL, 1, 3, 1),
        (FuKind.INT_DIV, 1, 21, 12),
        (FuKind.FP_ALU, 1, 3, 1),
        (FuKind.FP_MUL, 1, 5, 1),
        (FuKind.FP_DIV, 1, 24, 12),
    ]
    return {k: FunctionalUnitSpec(k, c, lat, rot) for k, c, lat, rot in rows}


def _default_caches() -> dict[CacheLevelName, CacheConfig]:
    kb = 1024
    wt, wb = WriteMode.WRITE_THROUGH, WriteMode.WRITE_BACK
    return {
        CacheLevelName.L1I: CacheConfig(CacheLevelName.L1I, 32 * kb, 64, 8, 3, wt, False),
        CacheLevelName.L1D: CacheConfig(CacheLevelName.L1D, 32 * kb, 64, 8, 3, wt, False),
        CacheLevelName.L2: CacheConfig(CacheLevelName.L2, 256 * kb, 64, 8, 6, wb, False),
        CacheLevelName.L3: CacheConfig(CacheLevelName.L3, 15 * kb * kb, 64, 8, 29, wb, True),
    }


@dataclass(frozen=True)
class MachineConfig:
    """Treat as immutable; the dict fields are never mutated after construction."""

    num_cores: int = 12
    frequency: int = 2_000_000_000
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    fus: dict = field(default_factory=_default_fus)
    caches: dict = field(default_factory=_default_caches)
    mem_latency: int = 200
    noc: NocConfig = field(default_factory=NocConfig)
    predictor: TageConfig = field(default_factory=TageConfig)

    def fu(self, kind: FuKind | str) -> FunctionalUnitSpec:
        return self.fus[FuKind(kind)]

    def cache(self, level: CacheLevelName | str) -> CacheConfig:
        return self.caches[CacheLevelName(level)]


def default_sandybridge() -> MachineConfig:
    return MachineConfig()


def validate_config(cfg: MachineConfig) -> list[str]:
    v = []
    for f in dataclasses.fields(cfg.pipeline):
        if getattr(cfg.pipeline, f.name) <= 0:
            v.append(f"pipeline.{f.name}: must be > 0")
    if cfg.pipeline.rob_size < cfg.pipeline.iw_size:
        v.append("pipeline.rob_size: must be >= iw_size")
    # any architectural register may be renamed into either file
    for name in ("int_phys_regs", "fp_phys_regs"):
        if getattr(cfg.pipeline, name) <= NUM_ARCH_REGS:
            v.append(f"pipeline.{name}: must exceed the {NUM_ARCH_REGS} architectural registers")

    for kind in FuKind:
        spec = cfg.fus.get(kind)
        if spec is None:
            v.append(f"fu.{kind.value.lower()}: missing")
            continue
        name = f"fu.{kind.value.lower()}"
        if spec.count < 1:
            v.append(f"{name}.count: must be >= 1")
        if spec.recip_throughput < 1:
            v.append(f"{name}.recip_throughput: must be >= 1")
        if spec.latency < 1:
            v.append(f"{name}.latency: latency >= 1")
        elif spec.latency < spec.recip_throughput:
            v.append(f"{name}.latency: latency >= recip_throughput")
    extra = set(cfg.fus) - set(FuKind)
    if extra:
        v.append(f"fus: unexpected kinds {sorted(map(str, extra))}")

    for level in CacheLevelName:
        c = cfg.caches.get(level)
        name = f"cache.{level.value.lower()}"
        if c is None:
            v.append(f"{name}: missing")
            continue
        if c.block_size <= 0 or c.block_size & (c.block_size - 1):
            v.append(f"{name}.block_size: block_size must be a power of two")
        if c.associativity < 1:
            v.append(f"{name}.associativity: must be >= 1")
        elif c.block_size > 0 and (c.size <= 0 or c.size % (c.block_size * c.associativity)):
            v.append(f"{name}.size: size not divisible by block×assoc")
        if c.latency < 1:
            v.append(f"{name}.latency: latency >= 1")

    if cfg.noc.flit_size <= 0:
        v.append("noc.flit_size: must be > 0")
    if cfg.noc.hop_latency < 1:
        v.append("noc.hop_latency: must be >= 1")
    if cfg.num_cores < 1:
        v.append("machine.num_cores: must be >= 1")
    if cfg.frequency <= 0:
        v.append("machine.frequency: must be > 0")
    if cfg.mem_latency < 1:
        v.append("machine.mem_latency: must be >= 1")
    v.extend(cfg.predictor.violations())
    return v


# ---------------------------------------------------------------- text format

_SUFFIX = {"": 1, "k": 1024, "kb": 1024, "m": 1024**2, "mb": 1024**2,
           "g": 1024**3, "gb": 1024**3}
_FREQ_SUFFIX = {"": 1, "hz": 1, "khz": 10**3, "mhz": 10**6, "ghz": 10**9}
_NUM_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([a-zA-Z]*)\s*$")


def _parse_int(text: str, key: str, table=_SUFFIX) -> int:
    m = _NUM_RE.match(text)
    if not m or m.group(2).lower() not in table:
        raise ConfigError("TYPE_MISMATCH", f"{key}: expected an integer, got {text!r}")
    value = float(m.group(1)) * table[m.group(2).lower()]
    if value != int(value):
        raise ConfigError("TYPE_MISMATCH", f"{key}: not a whole number: {text!r}")
    return int(value)


def _parse_bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError("TYPE_MISMATCH", f"{key}: expected a boolean, got {text!r}")


def _parse_enum(text: str, key: str, enum_cls):
    try:
        return enum_cls(text.strip().upper())
    except ValueError:
        choices = ", ".join(e.value.lower() for e in enum_cls)
        raise ConfigError("TYPE_MISMATCH", f"{key}: expected one of {choices}, got {text!r}") from None


def _coerce(value: str, key: str, current):
    if isinstance(current, bool):
        return _parse_bool(value, key)
    if isinstance(current, enum.Enum):
        return _parse_enum(value, key, type(current))
    if isinstance(current, tuple):
        parts = [p for p in re.split(r"[,\s]+", value.strip()) if p]
        if not parts:
            raise ConfigError("TYPE_MISMATCH", f"{key}: expected a list of integers")
        return tuple(_parse_int(p, key) for p in parts)
    if key == "machine.frequency":
        return _parse_int(value, key, _FREQ_SUFFIX)
    return _parse_int(value, key)


def _overlay(obj, section: str, items: list[tuple[str, str]], skip=()):
    names = {f.name for f in dataclasses.fields(obj)} - set(skip)
    changes = {}
    for key, value in items:
        if key not in names:
            raise ConfigError("UNKNOWN_KEY", f"unknown key {section}.{key}")
        changes[key] = _coerce(value, f"{section}.{key}", getattr(obj, key))
    return replace(obj, **changes)


_MACHINE_KEYS = ("num_cores", "frequency", "mem_latency")


_TOP = "\x00top"


def _sections(text: str) -> list[tuple[str, list[tuple[str, str]], bool]]:
    """(section, items, top_level) triples; top-level ``section.key = v`` lines come first."""
    cp = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",),
        delimiters=("=",), strict=True, interpolation=None,
        default_section="\x00defaults",
    )
    cp.optionxform = str
    # a synthetic header lets dotted keys appear before any [section]
    try:
        cp.read_string(f"[{_TOP}]\n" + text)
    except configparser.DuplicateSectionError as e:
        raise ConfigError("SYNTAX", f"duplicate section [{e.section}]", line=e.lineno - 1) from None
    except configparser.DuplicateOptionError as e:
        raise ConfigError("SYNTAX", f"duplicate key {e.section}.{e.option}",
                          line=e.lineno - 1) from None
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] - 1 if e.errors else None
        raise ConfigError("SYNTAX", "malformed line", line=lineno) from None
    out = []
    for key, value in cp.items(_TOP):
        sec, dot, name = key.rpartition(".")
        if not dot:
            raise ConfigError("UNKNOWN_KEY", f"unknown key {key} (top-level keys are section.key)")
        out.append((sec, [(name, value)], True))
    out.extend((s, list(cp.items(s)), False) for s in cp.sections() if s != _TOP)
    return out


def parse_config(text: str) -> MachineConfig:
    """Overlay an INI-style document onto the default machine.

    Keys go in ``[pipeline]``, ``[fu.int_div]``, ``[cache.l2]``, ... sections,
    or at top level in dotted form (``pipeline.rob_size = 64``).
    """
    cfg = default_sandybridge()
    fus, caches = dict(cfg.fus), dict(cfg.caches)
    for section, items, top in _sections(text):
        sec = section.strip().lower()
        if sec == "machine":
            changes = {}
            for key, value in items:
                if key not in _MACHINE_KEYS:
                    raise ConfigError("UNKNOWN_KEY", f"unknown key machine.{key}")
                changes[key] = _coerce(value, f"machine.{key}", getattr(cfg, key))
            cfg = replace(cfg, **changes)
        elif sec == "pipeline":
            cfg = replace(cfg, pipeline=_overlay(cfg.pipeline, sec, items))
        elif sec == "noc":
            cfg = replace(cfg, noc=_overlay(cfg.noc, sec, items))
        elif sec == "predictor":
            cfg = replace(cfg, predictor=_overlay(cfg.predictor, sec, items))
        elif sec.startswith("fu.") and sec[3:].upper() in FuKind.__members__:
            kind = FuKind(sec[3:].upper())
            fus[kind] = _overlay(fus[kind], sec, items, skip=("kind",))
        elif sec.startswith("cache.") and sec[6:].upper() in CacheLevelName.__members__:
            lv = CacheLevelName(sec[6:].upper())
            caches[lv] = _overlay(caches[lv], sec, items, skip=("level",))
        elif top:
            raise ConfigError("UNKNOWN_KEY", f"unknown key {section}.{items[0][0]}")
        else:
            raise ConfigError("UNKNOWN_KEY", f"unknown section [{section}]")
    return replace(cfg, fus=fus, caches=caches)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, enum.Enum):
        return value.value.lower()
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def _section(lines: list[str], name: str, obj, skip=()):
    lines.append(f"[{name}]")
    for f in dataclasses.fields(obj):
        if f.name not in skip:
            lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
    lines.append("")


def serialize_config(cfg: MachineConfig) -> str:
    lines = ["[machine]"]
    lines += [f"{k} = {getattr(cfg, k)}" for k in _MACHINE_KEYS]
    lines.append("")
    _section(lines, "pipeline", cfg.pipeline)
    for kind in FuKind:
        if kind in cfg.fus:
            _section(lines, f"fu.{kind.value.lower()}", cfg.fus[kind], skip=("kind",))
    for level in CacheLevelName:
        if level in cfg.caches:
            _section(lines, f"cache.{level.value.lower()}", cfg.caches[level], skip=("level",))
    _section(lines, "noc", cfg.noc)
    _section(lines, "predictor", cfg.predictor)
    return "\n".join(lines)


def load_config(path) -> MachineConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
