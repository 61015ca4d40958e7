"""Micro-op trace records, text trace files and synthetic microtraces.

One record per line, space delimited::

    <seq> <pc-hex> <KIND> [d=r<N>] [s=r<N>[,r<N>]] [a=<hex> w=<1|2|4|8>] [t=<hex> k=<0|1>]

``#`` starts a comment.  Files may be gzip-compressed; this is detected from
the magic bytes, not the file name.
"""

from __future__ import annotations

import enum
import gzip
import io
import os
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import TraceError

NUM_ARCH_REGS = 64
MEM_SIZES = (1, 2, 4, 8)


class OpKind(str, enum.Enum):
    INT_ALU = "INT_ALU"
    INT_MUL = "INT_MUL"
    INT_DIV = "INT_DIV"
    FP_ALU = "FP_ALU"
    FP_MUL = "FP_MUL"
    FP_DIV = "FP_DIV"
    LOAD = "LOAD"
    STORE = "STORE"
    BRANCH = "BRANCH"
    JUMP = "JUMP"
    NOP = "NOP"


MEM_KINDS = (OpKind.LOAD, OpKind.STORE)
NO_DST_KINDS = (OpKind.STORE, OpKind.BRANCH, OpKind.NOP)
FP_KINDS = (OpKind.FP_ALU, OpKind.FP_MUL, OpKind.FP_DIV)


@dataclass(frozen=True, slots=True)
class MicroOp:
    seq: int
    pc: int
    kind: OpKind
    srcs: tuple[int, ...] = ()
    dst: int | None = None
    mem_addr: int | None = None
    mem_size: int | None = None
    taken: bool | None = None
    target: int | None = None

    def check(self) -> None:
        """Raise TraceError if the kind-dependent field rules are broken."""
        k = self.kind
        if len(self.srcs) > 2:
            raise TraceError("SYNTAX", f"seq {self.seq}: at most 2 sources")
        for r in (*self.srcs, *(() if self.dst is None else (self.dst,))):
            if not 0 <= r < NUM_ARCH_REGS:
                raise TraceError("SYNTAX", f"seq {self.seq}: register r{r} out of range")
        if k in MEM_KINDS:
            if self.mem_addr is None or self.mem_size is None:
                raise TraceError("MISSING_FIELD", f"seq {self.seq}: {k.value} needs a= and w=")
            if self.mem_size not in MEM_SIZES:
                raise TraceError("SYNTAX", f"seq {self.seq}: bad access width {self.mem_size}")
        elif self.mem_addr is not None or self.mem_size is not None:
            raise TraceError("SYNTAX", f"seq {self.seq}: a=/w= only allowed on LOAD/STORE")
        if k is OpKind.BRANCH:
            if self.taken is None or self.target is None:
                raise TraceError("MISSING_FIELD", f"seq {self.seq}: BRANCH needs t= and k=")
        elif k is OpKind.JUMP:
            if self.target is None:
                raise TraceError("MISSING_FIELD", f"seq {self.seq}: JUMP needs t=")
            if self.taken is not None:
                raise TraceError("SYNTAX", f"seq {self.seq}: k= only allowed on BRANCH")
        elif self.taken is not None or self.target is not None:
            raise TraceError("SYNTAX", f"seq {self.seq}: t=/k= only allowed on BRANCH/JUMP")
        if k in NO_DST_KINDS and self.dst is not None:
            raise TraceError("SYNTAX", f"seq {self.seq}: {k.value} has no destination")


def _reg(tok: str) -> int:
    if len(tok) < 2 or tok[0] not in "rR" or not tok[1:].isdigit():
        raise TraceError("SYNTAX", f"bad register {tok!r}")
    return int(tok[1:])


def _hex(tok: str) -> int:
    try:
        return int(tok, 16)
    except ValueError:
        raise TraceError("SYNTAX", f"bad hex value {tok!r}") from None


def parse_trace_record(line: str) -> MicroOp:
    line = line.split("#", 1)[0]
    toks = line.split()
    if len(toks) < 3:
        raise TraceError("SYNTAX", "expected '<seq> <pc> <KIND> ...'")
    try:
        seq = int(toks[0])
    except ValueError:
        raise TraceError("SYNTAX", f"bad sequence number {toks[0]!r}") from None
    pc = _hex(toks[1])
    try:
        kind = OpKind(toks[2].upper())
    except ValueError:
        raise TraceError("BAD_ENUM", f"unknown op kind {toks[2]!r}") from None

    fields: dict[str, str] = {}
    for tok in toks[3:]:
        key, sep, val = tok.partition("=")
        if not sep or key not in ("d", "s", "a", "w", "t", "k") or not val:
            raise TraceError("SYNTAX", f"bad field {tok!r}")
        if key in fields:
            raise TraceError("SYNTAX", f"duplicate field {key}=")
        fields[key] = val

    dst = _reg(fields["d"]) if "d" in fields else None
    srcs = tuple(_reg(r) for r in fields["s"].split(",")) if "s" in fields else ()
    addr = _hex(fields["a"]) if "a" in fields else None
    size = None
    if "w" in fields:
        if not fields["w"].isdigit():
            raise TraceError("SYNTAX", f"bad access width {fields['w']!r}")
        size = int(fields["w"])
    target = _hex(fields["t"]) if "t" in fields else None
    taken = None
    if "k" in fields:
        if fields["k"] not in ("0", "1"):
            raise TraceError("SYNTAX", f"k= must be 0 or 1, got {fields['k']!r}")
        taken = fields["k"] == "1"

    op = MicroOp(seq, pc, kind, srcs, dst, addr, size, taken, target)
    op.check()
    return op


def format_trace_record(op: MicroOp) -> str:
    parts = [str(op.seq), f"0x{op.pc:x}", op.kind.value]
    if op.dst is not None:
        parts.append(f"d=r{op.dst}")
    if op.srcs:
        parts.append("s=" + ",".join(f"r{r}" for r in op.srcs))
    if op.mem_addr is not None:
        parts.append(f"a=0x{op.mem_addr:x}")
    if op.mem_size is not None:
        parts.append(f"w={op.mem_size}")
    if op.target is not None:
        parts.append(f"t=0x{op.target:x}")
    if op.taken is not None:
        parts.append(f"k={int(op.taken)}")
    return " ".join(parts)


class TraceStream:
    """Single-consumer ordered stream of micro-ops for one thread.

    Built from any iterable of MicroOps; sequence numbers are checked to be
    strictly increasing as ops are drawn.
    """

    def __init__(self, ops: Iterable[MicroOp], thread_id: int = 0):
        self.thread_id = thread_id
        self._ops = ops

    def __iter__(self) -> Iterator[MicroOp]:
        last = None
        for n, op in enumerate(self._ops, 1):
            if last is not None and op.seq <= last:
                raise TraceError("NON_MONOTONIC_SEQ",
                                 f"seq {op.seq} after {last}", line=n, thread=self.thread_id)
            last = op.seq
            yield op

    def to_list(self) -> list[MicroOp]:
        return list(self)


def _open_text(source) -> io.TextIOBase:
    if isinstance(source, (str, os.PathLike)):
        raw = open(source, "rb")
    elif isinstance(source, (bytes, bytearray)):
        raw = io.BytesIO(source)
    else:
        raw = source
    buffered = raw if hasattr(raw, "peek") else io.BufferedReader(raw)
    if buffered.peek(2)[:2] == b"\x1f\x8b":
        buffered = gzip.GzipFile(fileobj=buffered)
    return io.TextIOWrapper(buffered, encoding="utf-8")


def _read_records(source, thread_id: int) -> Iterator[MicroOp]:
    with _open_text(source) as fh:
        last = None
        for lineno, line in enumerate(fh, 1):
            if not line.split("#", 1)[0].strip():
                continue
            try:
                op = parse_trace_record(line)
            except TraceError as e:
                raise TraceError(e.code, e.raw,
                                 line=lineno, thread=thread_id) from None
            if last is not None and op.seq <= last:
                raise TraceError("NON_MONOTONIC_SEQ", f"seq {op.seq} after {last}",
                                 line=lineno, thread=thread_id)
            last = op.seq
            yield op


def read_trace_stream(source, thread_id: int = 0) -> TraceStream:
    """Lazily read a trace from a path, bytes, or binary file object."""
    return TraceStream(_read_records(source, thread_id), thread_id)


def write_trace(path, ops: Iterable[MicroOp]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for op in ops:
            fh.write(format_trace_record(op) + "\n")


# ------------------------------------------------------------ microtraces

class Pattern(str, enum.Enum):
    ALU_INDEP = "ALU_INDEP"
    DIV_CHAIN = "DIV_CHAIN"
    LOAD_CHAIN = "LOAD_CHAIN"
    STREAM_LOADS = "STREAM_LOADS"
    BRANCH_PERIODIC = "BRANCH_PERIODIC"
    MESI_PINGPONG = "MESI_PINGPONG"


CODE_BASE = 0x400000
DATA_BASE = 0x10000000


def _rot(i: int) -> int:
    # r1..r63, r0 stays the always-ready zero register
    return i % (NUM_ARCH_REGS - 1) + 1


def gen_microtrace(pattern: Pattern | str, n: int, **params):
    """Synthetic oracle workloads.

    Params: LOAD_CHAIN ``resident`` (bool, default False), ``footprint``
    (blocks, resident only, default 4); LOAD_CHAIN/STREAM_LOADS ``base``,
    ``stride`` (default 64); BRANCH_PERIODIC ``p`` (default 2);
    MESI_PINGPONG ``addr``.  MESI_PINGPONG returns one stream per thread.
    """
    try:
        pattern = pattern if isinstance(pattern, Pattern) else Pattern(str(pattern).upper())
    except ValueError:
        raise TraceError("BAD_PARAMS", f"unknown pattern {pattern!r}") from None
    if not isinstance(n, int) or n <= 0:
        raise TraceError("BAD_PARAMS", f"n must be a positive integer, got {n!r}")
    allowed = {
        Pattern.ALU_INDEP: set(), Pattern.DIV_CHAIN: set(),
        Pattern.LOAD_CHAIN: {"resident", "footprint", "base", "stride"},
        Pattern.STREAM_LOADS: {"base", "stride"},
        Pattern.BRANCH_PERIODIC: {"p"},
        Pattern.MESI_PINGPONG: {"addr"},
    }[pattern]
    unknown = set(params) - allowed
    if unknown:
        raise TraceError("BAD_PARAMS", f"{pattern.value} takes no {sorted(unknown)}")
    base = int(params.get("base", DATA_BASE))
    stride = int(params.get("stride", 64))
    if stride <= 0:
        raise TraceError("BAD_PARAMS", "stride must be > 0")
    pc = lambda i: CODE_BASE + 4 * i  # noqa: E731
    ops: list[MicroOp] = []

    if pattern is Pattern.ALU_INDEP:
        ops = [MicroOp(i + 1, pc(i), OpKind.INT_ALU, (0, 0), _rot(i)) for i in range(n)]
    elif pattern is Pattern.DIV_CHAIN:
        ops = [MicroOp(i + 1, pc(i), OpKind.INT_DIV, (_rot(i - 1) if i else 0,), _rot(i))
               for i in range(n)]
    elif pattern is Pattern.LOAD_CHAIN:
        resident = bool(params.get("resident", False))
        footprint = int(params.get("footprint", 4))
        if footprint <= 0:
            raise TraceError("BAD_PARAMS", "footprint must be > 0")
        for i in range(n):
            blk = i % footprint if resident else i
            ops.append(MicroOp(i + 1, pc(i), OpKind.LOAD, (_rot(i - 1) if i else 0,),
                               _rot(i), base + blk * stride, 8))
    elif pattern is Pattern.STREAM_LOADS:
        ops = [MicroOp(i + 1, pc(i), OpKind.LOAD, (0,), _rot(i), base + i * stride, 8)
               for i in range(n)]
    elif pattern is Pattern.BRANCH_PERIODIC:
        p = int(params.get("p", 2))
        if p <= 0:
            raise TraceError("BAD_PARAMS", "period p must be > 0")
        ops = [MicroOp(i + 1, CODE_BASE, OpKind.BRANCH, (0,), taken=(i % p == 0),
                       target=CODE_BASE + 0x40) for i in range(n)]
    elif pattern is Pattern.MESI_PINGPONG:
        addr = int(params.get("addr", DATA_BASE))
        streams = []
        for t in range(2):
            tops = []
            for i in range(n):
                tpc = CODE_BASE + 0x100000 * t + 4 * i
                if i % 2 == 0:
                    # data operand is the previous load's value
                    tops.append(MicroOp(i + 1, tpc, OpKind.STORE, (0, 1), None, addr, 8))
                else:
                    tops.append(MicroOp(i + 1, tpc, OpKind.LOAD, (0,), 1, addr, 8))
            streams.append(TraceStream(tops, t))
        return streams
    return TraceStream(ops, 0)
