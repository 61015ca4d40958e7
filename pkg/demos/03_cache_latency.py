"""Latency composition and MESI transitions in the memory hierarchy.

Latencies add along the walk: L1 (3), L2 (6), a bus hop (1), L3 (29),
DRAM (200) and the data hop back (1).  A dirty copy in another core's L2
is forwarded over the bus instead of going to L3.
"""

# %%
from microsim import MemoryHierarchy, default_sandybridge
from microsim.memhier import MemOp, cache_access

cfg = default_sandybridge()
h = MemoryHierarchy(cfg, num_cores=2)
A = 0x10000000


def access(core, addr, op, cycle, note):
    r = cache_access(h, core, addr, op, cycle)
    states = [h.l2[c].find(addr >> 6) for c in range(2)]
    states = [s.mesi.value if s else "I" for s in states]
    print(f"core{core} {op.value:5s} {note:28s} {r.latency:4d} cycles  "
          f"from {r.served_by.value:9s} L2 states {states}")


# %%
access(0, A, MemOp.READ, 0, "cold miss")
access(0, A, MemOp.READ, 1000, "L1 hit")
for i in range(1, 9):
    cache_access(h, 0, A + 4096 * i, MemOp.READ, 1000 + 500 * i)
access(0, A, MemOp.READ, 6000, "after 8 L1 conflicts")
access(1, A, MemOp.READ, 7000, "second reader, clean in L3")
access(0, A, MemOp.WRITE, 8000, "upgrade S to M")
access(1, A, MemOp.READ, 9000, "read of remote M copy")

# %% [markdown]
# The checker confirms single-writer, inclusion and the write-through L1
# rule after the sequence.

# %%
print("invariant violations:", h.check_invariants())
print("bus:", h.bus.stats())
