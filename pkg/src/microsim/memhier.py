"""TLBs, private L1/L2 caches, a shared L3, MESI snooping over the bus.

Latency of one access composes additively down the walk:

    L1 lookup (always)
    + L2 lookup                                  on L1 miss
    + bus hop + L3 lookup [+ memory] + bus hop   on L2 miss
    + bus hop + remote L2 lookup + bus hop       instead, when a remote M owner supplies

plus any cycles spent waiting for the bus.  The data return is counted as one
hop (critical flit first) although the whole block occupies the bus for
``ceil(block / flit)`` cycles.

The hierarchy is inclusive (L1 within L2 within L3).  L1s are write-through:
their lines mirror the L2 permission as E (L2 holds M or E) or S, never M.
L3 lines use M/E only to mark dirty/clean.  State changes take effect at the
time of the access; a per-core merge table makes later reads of a block whose
fill is still in flight wait for that fill.
"""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field

from .config import CacheConfig, CacheLevelName, MachineConfig
from .interconnect import Bus, MsgKind

PAGE_SHIFT = 12
REQ_BYTES = 8


class Mesi(str, enum.Enum):
    M = "M"
    E = "E"
    S = "S"
    I = "I"  # noqa: E741


class MemOp(str, enum.Enum):
    READ = "READ"
    WRITE = "WRITE"
    IFETCH = "IFETCH"


class ServedBy(str, enum.Enum):
    L1 = "L1"
    L2 = "L2"
    L3 = "L3"
    MEM = "MEM"
    REMOTE_L2 = "REMOTE_L2"


class SnoopReq(str, enum.Enum):
    GET_S = "GET_S"
    GET_X = "GET_X"


@dataclass(slots=True)
class CacheLine:
    tag: int
    mesi: Mesi
    lru_rank: int


@dataclass(frozen=True)
class MemAccessResult:
    latency: int
    served_by: ServedBy
    actions: tuple = ()


@dataclass
class SnoopResult:
    actions: list = field(default_factory=list)
    supplier: int | None = None
    requester_state: Mesi = Mesi.E


class CacheLevel:
    """Set-associative array with true LRU; rank 0 is MRU.

    Sets are materialised on first touch.  Invalid lines are kept at the
    bottom of the LRU order, so the victim is always the line of max rank.
    """

    def __init__(self, config: CacheConfig, touched: set | None = None):
        self.config = config
        self.touched = touched
        self.ways = config.associativity
        self.num_sets = config.num_sets
        self._sets: dict[int, list[CacheLine]] = {}
        self.stats = {"hits": 0, "misses": 0, "writebacks": 0, "invalidations": 0}

    def _set(self, block: int) -> list[CacheLine]:
        idx = block % self.num_sets
        s = self._sets.get(idx)
        if s is None:
            s = [CacheLine(0, Mesi.I, r) for r in range(self.ways)]
            self._sets[idx] = s
        return s

    def find(self, block: int) -> CacheLine | None:
        s = self._sets.get(block % self.num_sets)
        if s is None:
            return None
        tag = block // self.num_sets
        for line in s:
            if line.mesi is not Mesi.I and line.tag == tag:
                return line
        return None

    def touch(self, block: int, line: CacheLine) -> None:
        r = line.lru_rank
        for other in self._set(block):
            if other.lru_rank < r:
                other.lru_rank += 1
        line.lru_rank = 0

    def insert(self, block: int, state: Mesi) -> tuple[int, Mesi] | None:
        """Place ``block``; returns the evicted (block, state) if a valid line was displaced."""
        s = self._set(block)
        victim = max(s, key=lambda ln: ln.lru_rank)
        evicted = None
        if victim.mesi is not Mesi.I:
            evicted = (victim.tag * self.num_sets + block % self.num_sets, victim.mesi)
            if self.touched is not None:
                self.touched.add(evicted[0])
        victim.tag = block // self.num_sets
        victim.mesi = state
        self.touch(block, victim)
        return evicted

    def invalidate(self, block: int) -> Mesi | None:
        line = self.find(block)
        if line is None:
            return None
        old = line.mesi
        line.mesi = Mesi.I
        r = line.lru_rank
        for other in self._sets[block % self.num_sets]:
            if other.lru_rank > r:
                other.lru_rank -= 1
        line.lru_rank = self.ways - 1
        self.stats["invalidations"] += 1
        return old

    def set_lines(self, idx: int) -> list[CacheLine]:
        return list(self._sets.get(idx, [CacheLine(0, Mesi.I, r) for r in range(self.ways)]))

    def touched_sets(self):
        return self._sets.items()

    def blocks(self):
        for idx, s in self._sets.items():
            for line in s:
                if line.mesi is not Mesi.I:
                    yield line.tag * self.num_sets + idx, line.mesi


class Tlb:
    """Fully associative, LRU, flat miss penalty."""

    def __init__(self, entries: int = 128, miss_penalty: int = 30, page_shift: int = PAGE_SHIFT):
        self.entries = entries
        self.miss_penalty = miss_penalty
        self.page_shift = page_shift
        self._pages: OrderedDict[int, None] = OrderedDict()
        self.stats = {"hits": 0, "misses": 0}

    def __len__(self):
        return len(self._pages)

    def access(self, vaddr: int, cycle: int = 0) -> int:
        page = vaddr >> self.page_shift
        if page in self._pages:
            self._pages.move_to_end(page)
            self.stats["hits"] += 1
            return 0
        self.stats["misses"] += 1
        if len(self._pages) >= self.entries:
            self._pages.popitem(last=False)
        self._pages[page] = None
        return self.miss_penalty


def tlb_access(tlb: Tlb, vaddr: int, cycle: int = 0) -> int:
    return tlb.access(vaddr, cycle)


def _mirror(state: Mesi) -> Mesi:
    return Mesi.E if state in (Mesi.M, Mesi.E) else Mesi.S


class MemoryHierarchy:
    def __init__(self, cfg: MachineConfig, num_cores: int = 1, record_bus: bool = False):
        sizes = {c.block_size for c in cfg.caches.values()}
        if len(sizes) != 1:
            raise ValueError("all cache levels must share one block size")
        self.cfg = cfg
        self.num_cores = num_cores
        self.block_size = sizes.pop()
        self.bshift = self.block_size.bit_length() - 1
        cc = cfg.caches
        self.l1i = [CacheLevel(cc[CacheLevelName.L1I]) for _ in range(num_cores)]
        self.l1d = [CacheLevel(cc[CacheLevelName.L1D]) for _ in range(num_cores)]
        self.l2 = [CacheLevel(cc[CacheLevelName.L2]) for _ in range(num_cores)]
        self.l3 = CacheLevel(cc[CacheLevelName.L3])
        # blocks changed since the last check_touched(); None until first used
        self.touched: set[int] | None = None
        p = cfg.pipeline
        self.itlb = [Tlb(p.itlb_entries, p.tlb_miss_penalty) for _ in range(num_cores)]
        self.dtlb = [Tlb(p.dtlb_entries, p.tlb_miss_penalty) for _ in range(num_cores)]
        self.l3_agent = num_cores
        self.bus = Bus(cfg.noc, num_cores + 1, record=record_bus)
        self.sharers: dict[int, set[int]] = {}
        self._pending: list[dict[int, int]] = [{} for _ in range(num_cores)]
        self.mem_reads = 0
        self.mem_writebacks = 0
        self.merged = 0
        self.version = 0

    # -- coherence ---------------------------------------------------------

    def _set_l1_state(self, core: int, block: int, state: Mesi) -> None:
        for l1 in (self.l1i[core], self.l1d[core]):
            line = l1.find(block)
            if line is not None:
                line.mesi = _mirror(state)

    def _drop_private(self, core: int, block: int) -> Mesi | None:
        self.l1i[core].invalidate(block)
        self.l1d[core].invalidate(block)
        old = self.l2[core].invalidate(block)
        holders = self.sharers.get(block)
        if holders is not None:
            holders.discard(core)
            if not holders:
                del self.sharers[block]
        return old

    def _mark_l3_dirty(self, block: int) -> None:
        line = self.l3.find(block)
        if line is not None:
            line.mesi = Mesi.M

    def snoop_apply(self, requester: int, block: int, req: SnoopReq | str) -> SnoopResult:
        req = SnoopReq(req)
        res = SnoopResult()
        others = sorted(c for c in self.sharers.get(block, ()) if c != requester)
        for c in others:
            line = self.l2[c].find(block)
            st = line.mesi
            if req is SnoopReq.GET_S:
                if st is Mesi.M:
                    self._mark_l3_dirty(block)
                    self.l2[c].stats["writebacks"] += 1
                    res.supplier = c
                    res.actions.append((c, "M->S", "writeback"))
                elif st is Mesi.E:
                    res.actions.append((c, "E->S", None))
                line.mesi = Mesi.S
                self._set_l1_state(c, block, Mesi.S)
            else:
                if st is Mesi.M:
                    res.supplier = c
                self._drop_private(c, block)
                res.actions.append((c, f"{st.value}->I", "supply" if st is Mesi.M else None))
        if req is SnoopReq.GET_X:
            res.requester_state = Mesi.M
        else:
            res.requester_state = Mesi.S if others else Mesi.E
        return res

    # -- fills and evictions -----------------------------------------------

    def _fill_l1(self, l1: CacheLevel, block: int, l2_state: Mesi) -> None:
        line = l1.find(block)
        if line is None:
            l1.insert(block, _mirror(l2_state))  # write-through: victims need no writeback
        else:
            line.mesi = _mirror(l2_state)

    def _l3_insert(self, block: int, cycle: int) -> None:
        victim = self.l3.insert(block, Mesi.E)
        if victim is None:
            return
        vblock, vstate = victim
        dirty = vstate is Mesi.M
        for c in sorted(self.sharers.get(vblock, ())):
            if self._drop_private(c, vblock) is Mesi.M:
                dirty = True
        if dirty:
            self.l3.stats["writebacks"] += 1
            self.mem_writebacks += 1

    def _l2_insert(self, core: int, block: int, state: Mesi, cycle: int) -> None:
        l2 = self.l2[core]
        victim = l2.insert(block, state)
        self.sharers.setdefault(block, set()).add(core)
        if victim is None:
            return
        vblock, vstate = victim
        holders = self.sharers.get(vblock)
        if holders is not None:
            holders.discard(core)
            if not holders:
                del self.sharers[vblock]
        self.l1i[core].invalidate(vblock)
        self.l1d[core].invalidate(vblock)
        if vstate is Mesi.M:
            self._mark_l3_dirty(vblock)
            l2.stats["writebacks"] += 1
            self.bus.send(self.bus.message(core, self.l3_agent, self.block_size, MsgKind.DATA), cycle)

    # -- the walk ----------------------------------------------------------

    def _hop(self, msg_src: int, msg_dst: int, nbytes: int, kind: MsgKind, at: int) -> int:
        """Cycles from ``at`` until the message's first flit arrives."""
        bus = self.bus
        start = bus.reserve(bus.message(msg_src, msg_dst, nbytes, kind), at)
        return start - at + self.cfg.noc.hop_latency

    def cache_access(self, core: int, addr: int, op: MemOp | str, cycle: int) -> MemAccessResult:
        op = MemOp(op)
        self.version += 1
        block = addr >> self.bshift
        if self.touched is not None:
            self.touched.add(block)
        l1 = self.l1i[core] if op is MemOp.IFETCH else self.l1d[core]
        l2 = self.l2[core]
        write = op is MemOp.WRITE
        line1 = l1.find(block)
        line2 = l2.find(block)
        owned = line2 is not None and line2.mesi in (Mesi.M, Mesi.E)
        lat = l1.config.latency

        if line1 is not None:
            l1.stats["hits"] += 1
            l1.touch(block, line1)
            if not write or owned:
                if write:
                    # write-through to the owning L2, off the critical path
                    line2.mesi = Mesi.M
                    l2.touch(block, line2)
                    self._set_l1_state(core, block, Mesi.M)
                return MemAccessResult(lat, ServedBy.L1)
        else:
            l1.stats["misses"] += 1

        lat += l2.config.latency
        if line2 is not None and (not write or owned):
            l2.stats["hits"] += 1
            l2.touch(block, line2)
            if write:
                line2.mesi = Mesi.M
            self._fill_l1(l1, block, line2.mesi)
            self._set_l1_state(core, block, line2.mesi)
            return MemAccessResult(lat, ServedBy.L2)
        l2.stats["misses"] += 1

        lat += self._hop(core, self.l3_agent, REQ_BYTES, MsgKind.REQ, cycle + lat)
        snoop = self.snoop_apply(core, block, SnoopReq.GET_X if write else SnoopReq.GET_S)

        if line2 is not None:
            # S -> M upgrade: no data moves, wait for the invalidation ack
            lat += self._hop(self.l3_agent, core, REQ_BYTES, MsgKind.ACK, cycle + lat)
            line2.mesi = Mesi.M
            l2.touch(block, line2)
            self._fill_l1(l1, block, Mesi.M)
            self._set_l1_state(core, block, Mesi.M)
            return MemAccessResult(lat, ServedBy.L2, tuple(snoop.actions))

        line3 = self.l3.find(block)
        if snoop.supplier is not None:
            lat += self.l2[snoop.supplier].config.latency
            served, src = ServedBy.REMOTE_L2, snoop.supplier
            if line3 is not None:
                self.l3.touch(block, line3)
        else:
            lat += self.l3.config.latency
            src = self.l3_agent
            if line3 is not None:
                self.l3.stats["hits"] += 1
                self.l3.touch(block, line3)
                served = ServedBy.L3
            else:
                self.l3.stats["misses"] += 1
                lat += self.cfg.mem_latency
                self.mem_reads += 1
                self._l3_insert(block, cycle)
                served = ServedBy.MEM
        lat += self._hop(src, core, self.block_size, MsgKind.DATA, cycle + lat)
        self._l2_insert(core, block, snoop.requester_state, cycle)
        self._fill_l1(l1, block, snoop.requester_state)
        return MemAccessResult(lat, served, tuple(snoop.actions))

    def access(self, core: int, addr: int, op: MemOp | str, cycle: int) -> int:
        """Total latency seen by the core: TLB, cache walk, in-flight fill merge."""
        op = MemOp(op)
        tlb = self.itlb[core] if op is MemOp.IFETCH else self.dtlb[core]
        extra = tlb.access(addr, cycle)
        t = cycle + extra
        res = self.cache_access(core, addr, op, t)
        lat = res.latency
        if op is not MemOp.WRITE:
            pend = self._pending[core]
            block = addr >> self.bshift
            if res.served_by is ServedBy.L1:
                ready = pend.get(block)
                if ready is not None and ready > t + lat:
                    lat = ready - t
                    self.merged += 1
            else:
                if len(pend) > 4096:
                    for b in [b for b, r in pend.items() if r <= cycle]:
                        del pend[b]
                pend[block] = t + lat
        return extra + lat

    def tick(self, cycle: int) -> None:
        self.bus.step(cycle)

    def next_event(self, cycle: int) -> float:
        return self.bus.next_event(cycle)

    # -- reporting and checks ----------------------------------------------

    def cache_stats(self) -> dict[str, dict[str, int]]:
        out = {}
        for c in range(self.num_cores):
            out[f"core{c}.L1I"] = dict(self.l1i[c].stats)
            out[f"core{c}.L1D"] = dict(self.l1d[c].stats)
            out[f"core{c}.L2"] = dict(self.l2[c].stats)
            out[f"core{c}.ITLB"] = dict(self.itlb[c].stats)
            out[f"core{c}.DTLB"] = dict(self.dtlb[c].stats)
        out["L3"] = dict(self.l3.stats)
        out["MEM"] = {"reads": self.mem_reads, "writebacks": self.mem_writebacks}
        return out

    def check_touched(self) -> list[str]:
        """Check the invariants for blocks touched since the previous call.

        The first call checks everything and starts change tracking.
        """
        blocks, self.touched = self.touched, set()
        for lv in [self.l3] + self.l2 + self.l1i + self.l1d:
            lv.touched = self.touched
        if blocks is None:
            return self.check_invariants()
        bad = []
        for b in sorted(blocks):
            bad.extend(self._check_block(b))
        return bad

    def _check_block(self, b: int) -> list[str]:
        bad = []
        holders = []
        in_l3 = self.l3.find(b) is not None
        for c in range(self.num_cores):
            line2 = self.l2[c].find(b)
            if line2 is not None:
                holders.append((c, line2.mesi))
                if not in_l3:
                    bad.append(f"inclusion: core{c} L2 block {b:#x} not in L3")
            for name, l1 in (("L1I", self.l1i[c]), ("L1D", self.l1d[c])):
                line1 = l1.find(b)
                if line1 is None:
                    continue
                if line1.mesi is Mesi.M:
                    bad.append(f"write-through: core{c} {name} block {b:#x} in M")
                if line2 is None:
                    bad.append(f"inclusion: core{c} {name} block {b:#x} not in L2")
                elif line1.mesi is not _mirror(line2.mesi):
                    bad.append(f"mirror: core{c} {name} block {b:#x}")
        excl = [c for c, st in holders if st in (Mesi.M, Mesi.E)]
        if len(excl) > 1 or (excl and len(holders) > 1):
            bad.append(f"single-writer: block {b:#x} held as {holders}")
        if set(self.sharers.get(b, ())) != {c for c, _ in holders}:
            bad.append(f"sharers: block {b:#x} map disagrees with L2 contents")
        for lv in [self.l3] + self.l2 + self.l1i + self.l1d:
            s = lv._sets.get(b % lv.num_sets)
            if s is not None and sorted(ln.lru_rank for ln in s) != list(range(lv.ways)):
                bad.append(f"lru: {lv.config.level.value} set {b % lv.num_sets} ranks not a permutation")
        return bad

    def check_invariants(self) -> list[str]:
        """Full check over every resident block."""
        bad = []
        owners: dict[int, list[tuple[int, Mesi]]] = {}
        for c in range(self.num_cores):
            l2_blocks = dict(self.l2[c].blocks())
            for b, st in l2_blocks.items():
                owners.setdefault(b, []).append((c, st))
                if self.l3.find(b) is None:
                    bad.append(f"inclusion: core{c} L2 block {b:#x} not in L3")
                if c not in self.sharers.get(b, ()):
                    bad.append(f"sharers: core{c} L2 block {b:#x} missing from sharer map")
            for name, l1 in (("L1I", self.l1i[c]), ("L1D", self.l1d[c])):
                for b, st in l1.blocks():
                    if st is Mesi.M:
                        bad.append(f"write-through: core{c} {name} block {b:#x} in M")
                    if b not in l2_blocks:
                        bad.append(f"inclusion: core{c} {name} block {b:#x} not in L2")
                    elif st is not _mirror(l2_blocks[b]):
                        bad.append(f"mirror: core{c} {name} block {b:#x} {st.value} vs L2 {l2_blocks[b].value}")
        for b, holders in owners.items():
            excl = [c for c, st in holders if st in (Mesi.M, Mesi.E)]
            if len(excl) > 1 or (excl and len(holders) > 1):
                bad.append(f"single-writer: block {b:#x} held as {holders}")
        for b, cores in self.sharers.items():
            if set(cores) != {c for c, _ in owners.get(b, [])}:
                bad.append(f"sharers: block {b:#x} map {sorted(cores)} disagrees with L2 contents")
        levels = [self.l3] + self.l2 + self.l1i + self.l1d
        for lv in levels:
            for idx, s in lv.touched_sets():
                if sorted(ln.lru_rank for ln in s) != list(range(lv.ways)):
                    bad.append(f"lru: {lv.config.level.value} set {idx} ranks not a permutation")
        return bad


def cache_access(hier: MemoryHierarchy, core: int, addr: int, op, cycle: int) -> MemAccessResult:
    return hier.cache_access(core, addr, op, cycle)


def snoop_apply(hier: MemoryHierarchy, requester: int, addr: int, req) -> SnoopResult:
    return hier.snoop_apply(requester, addr >> hier.bshift, req)


class FixedLatencyMemory:
    """Ideal memory: every access costs the same, no state."""

    def __init__(self, latency: int = 3):
        self.latency = latency
        self.version = 0

    def access(self, core: int, addr: int, op, cycle: int) -> int:
        return self.latency

    def tick(self, cycle: int) -> None:
        pass

    def next_event(self, cycle: int) -> float:
        return float("inf")

    def cache_stats(self) -> dict:
        return {}

    def check_invariants(self) -> list[str]:
        return []
