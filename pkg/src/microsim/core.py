"""Out-of-order core: fetch, rename/dispatch, issue, execute, retire.

Timing of one op fetched at cycle F with an idle pipeline::

    F                      fetch
    F + depth - 1          rename/dispatch into ROB, issue window, LSQ
    F + depth              earliest issue (oldest-first select)
    issue + latency        result ready; dependents may issue this cycle
    ready + 1              earliest retirement

Within ``step`` the stages run retire-side first (resolve, retire, drain,
issue, dispatch, fetch) so every op spends at least one cycle per stage.

Traces hold the committed path only.  A mispredicted branch squashes every
younger op when it resolves, rolls the rename map back, and the frontend
refetches the same ops after ``bmispred_penalty`` cycles.

Loads issue only once all older stores know their address; an older store
to exactly the same address and size forwards its data, a partial overlap
blocks the load until that store has drained.  Stores write the hierarchy
at retirement and leave the store queue when that write completes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .branch_predictor import Prediction, Tage
from .config import FuKind, MachineConfig
from .errors import TraceError
from .memhier import MemOp
from .trace import FP_KINDS, NUM_ARCH_REGS, MicroOp, OpKind, TraceStream

INF = float("inf")
INT, FP = 0, 1

STALL_CAUSES = ("ROB_FULL", "IW_FULL", "LQ_FULL", "SQ_FULL", "NO_PHYS_REG", "NO_FU")

_FU_OF = {
    OpKind.INT_ALU: FuKind.INT_ALU, OpKind.INT_MUL: FuKind.INT_MUL,
    OpKind.INT_DIV: FuKind.INT_DIV, OpKind.FP_ALU: FuKind.FP_ALU,
    OpKind.FP_MUL: FuKind.FP_MUL, OpKind.FP_DIV: FuKind.FP_DIV,
    OpKind.BRANCH: FuKind.INT_ALU, OpKind.JUMP: FuKind.INT_ALU,
}

DISPATCHED, ISSUED, EXECUTING, COMPLETED = "DISPATCHED", "ISSUED", "EXECUTING", "COMPLETED"


class FuPool:
    def __init__(self, cfg: MachineConfig):
        self.specs = {k: cfg.fu(k) for k in FuKind}
        self.next_accept = {k: [0] * s.count for k, s in self.specs.items()}
        self.busy_until = {k: [0] * s.count for k, s in self.specs.items()}

    def accept(self, kind: FuKind, cycle: int) -> tuple[int, int] | None:
        units = self.next_accept[kind]
        for u, t in enumerate(units):
            if t <= cycle:
                spec = self.specs[kind]
                units[u] = cycle + spec.recip_throughput
                done = cycle + spec.latency
                self.busy_until[kind][u] = done
                return u, done
        return None

    def earliest(self, kind: FuKind) -> int:
        return min(self.next_accept[kind])


def fu_accept(pool: FuPool, kind: FuKind | str, cycle: int) -> tuple[int, int] | None:
    return pool.accept(FuKind(kind), cycle)


@dataclass(slots=True)
class RobEntry:
    op: MicroOp
    state: str = DISPATCHED
    dest: tuple[int, int] | None = None
    prev: tuple[int, int] | None = None
    srcs: tuple = ()
    complete: int | None = None
    pred: Prediction | None = None
    mispredicted: bool = False
    sq: "SqEntry | None" = None
    dispatched: int = -1
    rdy: float = INF  # sources-ready cycle, cached once every producer has issued
    wait: tuple[int, int] | None = None  # an unissued source register, while rdy is INF
    sq_seen: int = -1  # Core.sq_epoch when this load was last found blocked


@dataclass(slots=True)
class SqEntry:
    rob: RobEntry | None
    addr: int
    size: int
    seq: int
    addr_known: bool = False
    retired: bool = False
    drain: int | None = None


@dataclass
class CoreStats:
    cycles: int = 0
    retired: int = 0
    branch_predictions: int = 0
    branch_mispredictions: int = 0
    squashed: int = 0
    fu_issues: dict = field(default_factory=lambda: {k.value: 0 for k in FuKind})
    stalls: dict = field(default_factory=lambda: {c: 0 for c in STALL_CAUSES})

    def as_dict(self) -> dict[str, int]:
        d = {"cycles": self.cycles, "retired": self.retired,
             "branch_predictions": self.branch_predictions,
             "branch_mispredictions": self.branch_mispredictions,
             "squashed": self.squashed}
        d.update({f"fu_issues.{k}": v for k, v in self.fu_issues.items()})
        d.update({f"stalls.{k}": v for k, v in self.stalls.items()})
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CoreStats":
        s = cls()
        for key, v in d.items():
            if key.startswith("fu_issues."):
                s.fu_issues[key[10:]] = int(v)
            elif key.startswith("stalls."):
                s.stalls[key[7:]] = int(v)
            else:
                setattr(s, key, int(v))
        return s


@dataclass
class CycleEvents:
    cycle: int
    retired: list = field(default_factory=list)
    issued: int = 0
    dispatched: int = 0
    fetched: int = 0
    squashed: int = 0
    stall: str | None = None
    rob: int = 0
    iw: int = 0
    lq: int = 0
    sq: int = 0
    int_regs: int = 0
    fp_regs: int = 0

    @property
    def active(self) -> bool:
        return bool(self.retired or self.issued or self.dispatched or self.fetched or self.squashed)


def _file_of(kind: OpKind) -> int:
    return FP if kind in FP_KINDS else INT


class Core:
    def __init__(self, cfg: MachineConfig, trace: TraceStream, core_id: int = 0,
                 predictor=None, mispredict_all: bool = False):
        self.cfg = cfg
        self.p = cfg.pipeline
        self.core_id = core_id
        self.thread_id = getattr(trace, "thread_id", core_id)
        self._trace = iter(trace)
        self._refetch: deque[MicroOp] = deque()
        self._exhausted = False
        self.bp = predictor if predictor is not None else Tage(cfg.predictor)
        self.mispredict_all = mispredict_all
        self.fus = FuPool(cfg)
        self.width = self.p.retire_width  # fetch and dispatch bandwidth

        # physical register files: ready cycle per register, INF until issued
        nint, nfp = self.p.int_phys_regs, self.p.fp_phys_regs
        if min(nint, nfp) <= NUM_ARCH_REGS:
            raise ValueError("each physical register file must exceed the architectural registers")
        self.ready = ([0] * nint, [INF] * nfp)
        self.rmap: list[tuple[int, int]] = [(INT, r) for r in range(NUM_ARCH_REGS)]
        self.free = (deque(range(NUM_ARCH_REGS, nint)), deque(range(nfp)))

        self.frontend: deque[tuple[int, MicroOp]] = deque()
        self.rob: deque[RobEntry] = deque()
        self.iw: list[RobEntry] = []
        self.lq = 0
        self.sq: deque[SqEntry] = deque()
        self.pending_mispredicts: list[RobEntry] = []
        self.sq_epoch = 0  # bumped when a store's address becomes known or it drains
        self.fetch_stall_until = 0
        self.stats = CoreStats()
        self.last_stall: str | None = None
        self.done = False
        self.last_active = -1

    # -- helpers -----------------------------------------------------------

    def _next_op(self) -> MicroOp | None:
        if self._refetch:
            return self._refetch.popleft()
        if self._exhausted:
            return None
        try:
            return next(self._trace)
        except StopIteration:
            self._exhausted = True
            return None
        except TraceError as e:
            if e.thread is None:
                raise TraceError(e.code, e.raw, line=e.line,
                                 thread=self.thread_id) from None
            raise

    def _is_ready(self, e: RobEntry, cycle: int) -> bool:
        return self._srcs_ready_at(e) <= cycle

    def _srcs_ready_at(self, e: RobEntry) -> float:
        # a finite ready cycle never changes while its consumer waits
        if e.rdy != INF:
            return e.rdy
        ready = self.ready
        r = 0
        for f, p in e.srcs:
            v = ready[f][p]
            if v == INF:
                e.wait = (f, p)
                return INF
            if v > r:
                r = v
        e.rdy = r
        return r

    def occupancy(self) -> dict[str, int]:
        nint, nfp = self.p.int_phys_regs, self.p.fp_phys_regs
        return {"rob": len(self.rob), "iw": len(self.iw), "lq": self.lq, "sq": len(self.sq),
                "int_regs": nint - len(self.free[INT]), "fp_regs": nfp - len(self.free[FP])}

    @property
    def finished(self) -> bool:
        return (self._exhausted and not self._refetch and not self.frontend
                and not self.rob and not self.sq)

    # -- stages ------------------------------------------------------------

    def _resolve(self, cycle: int, ev: CycleEvents) -> None:
        due = [e for e in self.pending_mispredicts
               if e.complete is not None and e.complete <= cycle]
        if not due:
            return
        # the oldest squash subsumes younger ones
        branch = min(due, key=lambda e: e.op.seq)
        self.pending_mispredicts = [e for e in self.pending_mispredicts
                                    if e.op.seq < branch.op.seq]
        seq = branch.op.seq
        squashed_ops = []
        while self.rob and self.rob[-1].op.seq > seq:
            e = self.rob.pop()
            if e.dest is not None:
                self.rmap[e.op.dst] = e.prev
                f, r = e.dest
                self.ready[f][r] = INF
                self.free[f].append(r)
            if e.op.kind is OpKind.LOAD:
                self.lq -= 1
            squashed_ops.append(e.op)
        while self.sq and self.sq[-1].seq > seq:
            self.sq.pop()
        self.iw = [e for e in self.iw if e.op.seq < seq]
        squashed_ops.reverse()
        squashed_ops.extend(op for _, op in self.frontend)
        self.frontend.clear()
        self._refetch.extendleft(reversed(squashed_ops))
        self.bp.speculate(branch.pred, branch.op.taken)
        self.fetch_stall_until = cycle + self.p.bmispred_penalty
        self.stats.squashed += len(squashed_ops)
        ev.squashed = len(squashed_ops)

    def _retire(self, cycle: int, ev: CycleEvents, mem) -> None:
        n = 0
        while self.rob and n < self.p.retire_width:
            e = self.rob[0]
            if e.complete is None or e.complete >= cycle:
                break
            self.rob.popleft()
            e.state = COMPLETED
            op = e.op
            if e.prev is not None:
                f, r = e.prev
                self.free[f].append(r)
            if op.kind is OpKind.LOAD:
                self.lq -= 1
            elif op.kind is OpKind.STORE:
                s = e.sq
                s.retired = True
                s.rob = None
                s.drain = cycle + mem.access(self.core_id, op.mem_addr, MemOp.WRITE, cycle)
            elif op.kind is OpKind.BRANCH:
                self.bp.train(op.pc, op.taken, e.pred)
                self.stats.branch_predictions += 1
                if e.mispredicted:
                    self.stats.branch_mispredictions += 1
            ev.retired.append(op.seq)
            n += 1
        self.stats.retired += n

    def _drain(self, cycle: int) -> bool:
        drained = False
        while self.sq and self.sq[0].retired and self.sq[0].drain <= cycle:
            self.sq.popleft()
            drained = True
            self.sq_epoch += 1
        return drained

    def _load_blocker(self, e: RobEntry) -> tuple[bool, int | None]:
        """(blocked, forward_latency) for a load against older stores."""
        op = e.op
        lo, hi = op.mem_addr, op.mem_addr + op.mem_size
        fwd = None
        for s in self.sq:
            if s.seq > op.seq:
                break
            if not s.addr_known:
                return True, None
            if s.addr < hi and lo < s.addr + s.size:
                if s.addr == op.mem_addr and s.size == op.mem_size:
                    fwd = s
                else:
                    fwd = "partial"
        if fwd == "partial":
            return True, None
        if fwd is not None:
            return False, self.cfg.cache("L1D").latency
        return False, None

    def _issue(self, cycle: int, ev: CycleEvents, mem) -> None:
        issued = 0
        width = self.p.issue_width
        keep = []
        no_fu = False
        iw = self.iw
        ready = self.ready
        for i, e in enumerate(iw):
            if issued >= width:
                keep.extend(iw[i:])
                break
            r = e.rdy
            if r == INF:
                w = e.wait
                if w is None or ready[w[0]][w[1]] != INF:
                    r = self._srcs_ready_at(e)
            if r > cycle:
                keep.append(e)
                continue
            kind = e.op.kind
            if kind is OpKind.LOAD:
                if e.sq_seen == self.sq_epoch:
                    keep.append(e)
                    continue
                blocked, fwd = self._load_blocker(e)
                if blocked:
                    e.sq_seen = self.sq_epoch
                    keep.append(e)
                    continue
                lat = fwd if fwd is not None else mem.access(self.core_id, e.op.mem_addr,
                                                              MemOp.READ, cycle)
                done = cycle + lat
            elif kind is OpKind.STORE:
                done = cycle + 1
                e.sq.addr_known = True
                self.sq_epoch += 1
            else:
                fk = _FU_OF[kind]
                got = self.fus.accept(fk, cycle)
                if got is None:
                    no_fu = True
                    keep.append(e)
                    continue
                done = got[1]
                self.stats.fu_issues[fk.value] += 1
            e.complete = done
            e.state = EXECUTING if done > cycle + 1 else ISSUED
            if e.dest is not None:
                f, r = e.dest
                ready[f][r] = done
            issued += 1
        self.iw = keep
        ev.issued = issued
        if no_fu:
            self.stats.stalls["NO_FU"] += 1

    def _dispatch(self, cycle: int, ev: CycleEvents) -> None:
        p = self.p
        n = 0
        stall = None
        while self.frontend and n < self.width:
            arrive, op = self.frontend[0]
            if arrive > cycle:
                break
            kind = op.kind
            if len(self.rob) >= p.rob_size:
                stall = "ROB_FULL"
                break
            if kind is not OpKind.NOP and len(self.iw) >= p.iw_size:
                stall = "IW_FULL"
                break
            if kind is OpKind.LOAD and self.lq >= p.load_queue_size:
                stall = "LQ_FULL"
                break
            if kind is OpKind.STORE and len(self.sq) >= p.store_queue_size:
                stall = "SQ_FULL"
                break
            f = _file_of(kind)
            if op.dst is not None and not self.free[f]:
                stall = "NO_PHYS_REG"
                break
            self.frontend.popleft()
            e = RobEntry(op, dispatched=cycle)
            e.srcs = tuple(self.rmap[r] for r in op.srcs)
            if op.dst is not None:
                r = self.free[f].popleft()
                self.ready[f][r] = INF
                e.dest = (f, r)
                e.prev = self.rmap[op.dst]
                self.rmap[op.dst] = e.dest
            if kind is OpKind.NOP:
                e.complete = cycle
                e.state = COMPLETED
            else:
                self.iw.append(e)
            if kind is OpKind.LOAD:
                self.lq += 1
            elif kind is OpKind.STORE:
                e.sq = SqEntry(e, op.mem_addr, op.mem_size, op.seq)
                self.sq.append(e.sq)
            elif kind is OpKind.BRANCH:
                pred = self.bp.predict(op.pc)
                wrong = self.mispredict_all or pred.taken != op.taken
                e.pred = pred
                e.mispredicted = wrong
                # history follows the committed path; repairs reuse this checkpoint
                self.bp.speculate(pred, op.taken)
                if wrong:
                    self.pending_mispredicts.append(e)
            self.rob.append(e)
            n += 1
        ev.dispatched = n
        if stall is not None:
            self.stats.stalls[stall] += 1
        self.last_stall = stall

    def _fetch(self, cycle: int, ev: CycleEvents) -> None:
        if cycle < self.fetch_stall_until:
            return
        room = self.p.frontend_depth * self.width - len(self.frontend)
        n = 0
        arrive = cycle + self.p.frontend_depth - 1
        while n < min(self.width, room):
            op = self._next_op()
            if op is None:
                break
            self.frontend.append((arrive, op))
            n += 1
        ev.fetched = n

    def step(self, cycle: int, mem) -> CycleEvents:
        ev = CycleEvents(cycle)
        if self.done:
            return ev
        self._resolve(cycle, ev)
        self._retire(cycle, ev, mem)
        drained = self._drain(cycle)
        self._issue(cycle, ev, mem)
        self._dispatch(cycle, ev)
        self._fetch(cycle, ev)
        occ = self.occupancy()
        ev.rob, ev.iw, ev.lq, ev.sq = occ["rob"], occ["iw"], occ["lq"], occ["sq"]
        ev.int_regs, ev.fp_regs = occ["int_regs"], occ["fp_regs"]
        if ev.retired or drained:
            self.last_active = cycle
        if self.finished:
            self.done = True
            self.stats.cycles = self.last_active + 1
        return ev

    def next_event(self, cycle: int) -> float:
        """Earliest cycle after ``cycle`` at which ``step`` could change state."""
        if self.done:
            return INF
        t = INF
        if self.rob and self.rob[0].complete is not None:
            t = min(t, self.rob[0].complete + 1)
        for e in self.pending_mispredicts:
            if e.complete is not None:
                t = min(t, e.complete)
        if self.sq and self.sq[0].retired:
            t = min(t, self.sq[0].drain)
        # an arrived but blocked head waits on retire/drain/issue events
        if self.frontend and self.frontend[0][0] > cycle:
            t = min(t, self.frontend[0][0])
        room = len(self.frontend) < self.p.frontend_depth * self.width
        if room and not (self._exhausted and not self._refetch):
            t = min(t, max(self.fetch_stall_until, cycle + 1))
        for e in self.iw:
            r = self._srcs_ready_at(e)
            if r == INF:
                continue
            kind = e.op.kind
            if kind in _FU_OF:
                r = max(r, self.fus.earliest(_FU_OF[kind]))
            elif kind is OpKind.LOAD and r <= cycle:
                # blocked by an older store; released by that store's own events
                continue
            t = min(t, r)
        return max(t, cycle + 1)

    def skip(self, start: int, end: int) -> None:
        """Account for the idle cycles ``[start, end)`` jumped over by the engine.

        Nothing changes state inside the window, so the dispatch stall of the
        last stepped cycle repeats, and an op waits on a busy unit from the
        cycle its sources are ready until that unit frees up.
        """
        if end <= start:
            return
        if self.last_stall is not None:
            self.stats.stalls[self.last_stall] += end - start
        spans = []
        for e in self.iw:
            fk = _FU_OF.get(e.op.kind)
            if fk is None:
                continue
            lo, hi = max(self._srcs_ready_at(e), start), min(self.fus.earliest(fk), end)
            if lo < hi:
                spans.append((lo, hi))
        covered, reach = 0, start
        for lo, hi in sorted(spans):
            lo = max(lo, reach)
            if hi > lo:
                covered += hi - lo
                reach = hi
        self.stats.stalls["NO_FU"] += int(covered)


def core_step(core: Core, mem, cycle: int) -> CycleEvents:
    return core.step(cycle, mem)


def run_core(cfg: MachineConfig, trace: TraceStream, mem=None, *, predictor=None,
             mispredict_all: bool = False, observer=None, skip_idle: bool = True,
             max_cycles: int = 10**10) -> CoreStats:
    """Run one core to completion; ``mem`` defaults to a fresh one-core hierarchy."""
    from .engine import Simulation
    sim = Simulation(cfg, [trace], mem=mem, predictors=[predictor] if predictor else None,
                     mispredict_all=mispredict_all, observer=observer,
                     skip_idle=skip_idle, max_cycles=max_cycles)
    sim.run()
    return sim.cores[0].stats
