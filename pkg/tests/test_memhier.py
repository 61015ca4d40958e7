import random
from collections import OrderedDict

import pytest
from hypothesis import given, settings, strategies as st

from microsim.config import CacheConfig, CacheLevelName, default_sandybridge
from microsim.memhier import (CacheLevel, MemOp, MemoryHierarchy, Mesi, ServedBy, Tlb,
                              cache_access, snoop_apply, tlb_access)
from microsim.trace import DATA_BASE

CFG = default_sandybridge()
X = DATA_BASE


def hier(n=1):
    return MemoryHierarchy(CFG, n)


def l2_state(h, core, addr):
    line = h.l2[core].find(addr >> 6)
    return None if line is None else line.mesi


# ------------------------------------------------------------------ TLB

def test_tlb_examples():
    t = Tlb()
    assert tlb_access(t, 0x1234) == 30
    assert tlb_access(t, 0x1FFF) == 0
    t = Tlb(128)
    for page in range(1, 130):
        tlb_access(t, page << 12)
    assert tlb_access(t, 1 << 12) == 30
    assert t.stats == {"hits": 0, "misses": 130}


# ------------------------------------------------------------ latencies

def test_cold_read_is_240():
    r = cache_access(hier(), 0, X, MemOp.READ, 0)
    assert (r.latency, r.served_by) == (3 + 6 + 1 + 29 + 200 + 1, ServedBy.MEM)


def test_l1_hit_is_3():
    h = hier()
    cache_access(h, 0, X, MemOp.READ, 0)
    r = cache_access(h, 0, X + 8, MemOp.READ, 1000)
    assert (r.latency, r.served_by) == (3, ServedBy.L1)


def test_l2_hit_is_9():
    h = hier()
    # nine blocks one L1 set apart: the ninth pushes the first out of L1 only
    for i in range(9):
        cache_access(h, 0, X + i * 4096, MemOp.READ, 1000 * i)
    r = cache_access(h, 0, X, MemOp.READ, 10_000)
    assert (r.latency, r.served_by) == (9, ServedBy.L2)


def test_l3_hit_is_40():
    h = hier(2)
    cache_access(h, 0, X, MemOp.READ, 0)
    r = cache_access(h, 1, X, MemOp.READ, 1000)
    assert (r.latency, r.served_by) == (3 + 6 + 1 + 29 + 1, ServedBy.L3)
    assert l2_state(h, 0, X) is Mesi.S and l2_state(h, 1, X) is Mesi.S


def test_remote_modified_supplies():
    h = hier(2)
    cache_access(h, 0, X, MemOp.WRITE, 0)
    assert l2_state(h, 0, X) is Mesi.M
    r = cache_access(h, 1, X, MemOp.READ, 1000)
    assert (r.latency, r.served_by) == (3 + 6 + 1 + 6 + 1, ServedBy.REMOTE_L2)
    assert l2_state(h, 0, X) is Mesi.S and l2_state(h, 1, X) is Mesi.S
    assert h.l3.find(X >> 6).mesi is Mesi.M  # dirty data written back to L3


def test_upgrade_invalidates_sharer():
    h = hier(2)
    cache_access(h, 0, X, MemOp.READ, 0)
    cache_access(h, 1, X, MemOp.READ, 1000)
    r = cache_access(h, 0, X, MemOp.WRITE, 2000)
    assert (r.latency, r.served_by) == (3 + 6 + 1 + 1, ServedBy.L2)
    assert l2_state(h, 0, X) is Mesi.M and l2_state(h, 1, X) is None
    assert h.l1d[1].find(X >> 6) is None


def test_write_hit_on_exclusive_stays_private():
    h = hier(2)
    cache_access(h, 0, X, MemOp.READ, 0)
    msgs = h.bus.messages
    r = cache_access(h, 0, X, MemOp.WRITE, 1000)
    assert (r.latency, r.served_by) == (3, ServedBy.L1)
    assert h.bus.messages == msgs
    assert l2_state(h, 0, X) is Mesi.M
    assert h.l1d[0].find(X >> 6).mesi is Mesi.E


def test_bus_contention_adds_delay():
    h = hier(2)
    a = cache_access(h, 0, X, MemOp.READ, 0)
    b = cache_access(h, 1, X + 4096 * 1000, MemOp.READ, 0)
    assert a.latency == 240
    assert b.latency > 240


def test_merge_with_inflight_fill():
    h = hier()
    first = h.access(0, X, MemOp.READ, 0)
    second = h.access(0, X + 8, MemOp.READ, 5)
    assert 5 + second == first
    assert h.merged == 1


# --------------------------------------------------------------- snoops

def test_snoop_get_x_remote_exclusive():
    h = hier(2)
    cache_access(h, 0, X, MemOp.READ, 0)
    assert l2_state(h, 0, X) is Mesi.E
    res = snoop_apply(h, 1, X, "GET_X")
    assert res.requester_state is Mesi.M
    assert l2_state(h, 0, X) is None


def test_snoop_get_s_remote_modified():
    h = hier(2)
    cache_access(h, 0, X, MemOp.WRITE, 0)
    res = snoop_apply(h, 1, X, "GET_S")
    assert l2_state(h, 0, X) is Mesi.S
    assert res.requester_state is Mesi.S
    assert (0, "M->S", "writeback") in res.actions
    assert res.supplier == 0


def test_snoop_get_s_no_holders():
    res = snoop_apply(hier(2), 1, X, "GET_S")
    assert res.requester_state is Mesi.E and res.actions == []


# ------------------------------------------------------------------ LRU

def small_level(ways=4, sets=2):
    return CacheLevel(CacheConfig(CacheLevelName.L2, 64 * ways * sets, 64, ways, 1))


def test_lru_aba():
    lv = small_level()
    for b in (0, 2):
        lv.insert(b, Mesi.E)
    lv.touch(0, lv.find(0))
    assert lv.find(0).lru_rank == 0
    assert lv.find(2).lru_rank == 1


def test_victim_is_max_rank():
    lv = small_level(ways=4, sets=1)
    for b in range(4):
        lv.insert(b, Mesi.E)
    lv.touch(0, lv.find(0))
    worst = max(lv.set_lines(0), key=lambda ln: ln.lru_rank)
    assert worst.tag == 1
    assert lv.insert(9, Mesi.E) == (1, Mesi.E)


@given(st.lists(st.integers(0, 40), max_size=400), st.integers(1, 8), st.integers(1, 4))
def test_lru_matches_reference(blocks, ways, sets):
    lv = small_level(ways, sets)
    ref = [OrderedDict() for _ in range(sets)]
    for b in blocks:
        s = ref[b % sets]
        line = lv.find(b)
        assert (line is not None) == (b in s)
        if line is not None:
            lv.touch(b, line)
            s.move_to_end(b)
        else:
            victim = lv.insert(b, Mesi.E)
            expect = s.popitem(last=False)[0] if len(s) == ways else None
            assert (victim[0] if victim else None) == expect
            s[b] = None
        for idx in range(sets):
            ranks = sorted(ln.lru_rank for ln in lv.set_lines(idx))
            assert ranks == list(range(ways))


# --------------------------------------------------------- fuzz / props

@settings(max_examples=40)
@given(st.integers(1, 4), st.integers(0, 2**32), st.integers(64, 4096))
def test_coherence_fuzz(ncores, seed, footprint_blocks):
    rng = random.Random(seed)
    h = hier(ncores)
    past_l1 = reached_l3 = 0
    calls = [0] * ncores
    for i in range(600):
        core = rng.randrange(ncores)
        addr = X + rng.randrange(footprint_blocks) * 64 + rng.randrange(8) * 8
        op = rng.choice([MemOp.READ, MemOp.READ, MemOp.WRITE, MemOp.IFETCH])
        r = cache_access(h, core, addr, op, 3 * i)
        assert r.latency >= 3
        if op is not MemOp.IFETCH:
            calls[core] += 1
        past_l1 += r.served_by is not ServedBy.L1
        reached_l3 += r.served_by in (ServedBy.L3, ServedBy.MEM)
        if i % 50 == 0:
            assert h.check_invariants() == []
    assert h.check_invariants() == []
    stats = h.cache_stats()
    for c in range(ncores):
        d = stats[f"core{c}.L1D"]
        assert d["hits"] + d["misses"] == calls[c]
    assert sum(stats[f"core{c}.L2"]["hits"] + stats[f"core{c}.L2"]["misses"]
               for c in range(ncores)) == past_l1
    assert stats["L3"]["hits"] + stats["L3"]["misses"] == reached_l3


def test_check_touched_matches_full_check():
    rng = random.Random(5)
    h = hier(3)
    assert h.check_touched() == []
    for i in range(3000):
        addr = X + rng.randrange(20000) * 64
        cache_access(h, rng.randrange(3), addr, rng.choice(list(MemOp)), i)
        assert h.check_touched() == []
    assert h.check_invariants() == []


def test_check_detects_corruption():
    h = hier(2)
    cache_access(h, 0, X, MemOp.READ, 0)
    cache_access(h, 1, X, MemOp.READ, 1000)
    h.l2[0].find(X >> 6).mesi = Mesi.M
    h.l1d[1].find(X >> 6).mesi = Mesi.M
    bad = h.check_invariants()
    assert any(b.startswith("single-writer") for b in bad)
    assert any(b.startswith("write-through") for b in bad)


def test_inclusion_on_l3_eviction():
    cfg = default_sandybridge()
    import dataclasses
    caches = dict(cfg.caches)
    caches[CacheLevelName.L3] = dataclasses.replace(caches[CacheLevelName.L3], size=64 * 8 * 2)
    caches[CacheLevelName.L2] = dataclasses.replace(caches[CacheLevelName.L2], size=64 * 8 * 4)
    h = MemoryHierarchy(dataclasses.replace(cfg, caches=caches), 2)
    for i in range(200):
        cache_access(h, i % 2, X + 64 * i, MemOp.WRITE if i % 3 else MemOp.READ, 10 * i)
        assert h.check_invariants() == []
    assert h.mem_writebacks > 0


def test_block_sizes_must_match():
    import dataclasses
    caches = dict(CFG.caches)
    caches[CacheLevelName.L2] = dataclasses.replace(caches[CacheLevelName.L2], block_size=128)
    with pytest.raises(ValueError):
        MemoryHierarchy(dataclasses.replace(CFG, caches=caches), 1)
