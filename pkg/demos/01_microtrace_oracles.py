"""Microtraces with analytically known cycle counts.

Each synthetic trace isolates one mechanism of the core so its timing can
be predicted by hand and compared with what the simulator reports.
"""

# %%
from microsim import default_sandybridge, gen_microtrace, simulate

cfg = default_sandybridge()
fu = cfg.fu("INT_DIV")

# %% [markdown]
# A chain of dependent divides can do no better than one divide latency
# per op.  Fill and drain add a handful of cycles.

# %%
r = simulate(cfg, [gen_microtrace("DIV_CHAIN", 100)])
print(f"DIV_CHAIN   100 ops: {r.total_cycles:6d} cycles   bound {100 * fu.latency}")

# %% [markdown]
# Independent ALU ops are limited by the narrowest resource on their path:
# three ALUs against a retire width of four.

# %%
r = simulate(cfg, [gen_microtrace("ALU_INDEP", 400)])
alus = cfg.fu("INT_ALU").count
print(f"ALU_INDEP   400 ops: {r.total_cycles:6d} cycles   "
      f"ALU bound {-(-400 // alus)}, retire bound {400 // cfg.pipeline.retire_width}")

# %% [markdown]
# Pointer chasing through memory that was never touched: every load walks
# L1, L2, the bus, L3 and DRAM, and the next load needs its result.

# %%
r = simulate(cfg, [gen_microtrace("LOAD_CHAIN", 50)])
print(f"LOAD_CHAIN   50 ops: {r.total_cycles:6d} cycles   bound {50 * 240}")
r = simulate(cfg, [gen_microtrace("LOAD_CHAIN", 50, resident=True, footprint=4)])
print(f"  same chain on 4 cached blocks: {r.total_cycles} cycles")

# %% [markdown]
# A periodic branch is learnt by TAGE almost immediately; forcing every
# prediction wrong exposes the redirect penalty.

# %%
t = simulate(cfg, [gen_microtrace("BRANCH_PERIODIC", 50, p=2)])
f = simulate(cfg, [gen_microtrace("BRANCH_PERIODIC", 50, p=2)], mispredict_all=True)
print(f"BRANCH_PERIODIC 50: TAGE {t.total_cycles} cycles "
      f"({t.cores[0].branch_mispredictions} wrong), forced {f.total_cycles} cycles, "
      f"extra {f.total_cycles - t.total_cycles} >= {50 * cfg.pipeline.bmispred_penalty}")
