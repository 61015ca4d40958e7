"""Comparing simulated cycles with reference measurements.

A reference CSV carries the raw cycle counts of repeated hardware runs per
benchmark.  The simulator's cycle counts are compared against their mean,
and the suite is summarised by the mean absolute error and an error-band
histogram.  The reference numbers below are made up for the demonstration.
"""

# %%
import pathlib
import tempfile

from microsim import default_sandybridge, gen_microtrace, simulate
from microsim.cli import cli_main
from microsim.trace import write_trace
from microsim.validate import (ReferenceMeasurement, compare_report, render_text,
                               write_reference_csv)

cfg = default_sandybridge()
suite = {
    "divide": [gen_microtrace("DIV_CHAIN", 60)],
    "alu": [gen_microtrace("ALU_INDEP", 600)],
    "chase": [gen_microtrace("LOAD_CHAIN", 40)],
    "stream": [gen_microtrace("STREAM_LOADS", 400)],
    "pingpong": gen_microtrace("MESI_PINGPONG", 60),
}
sims = {name: simulate(cfg, traces) for name, traces in suite.items()}

# %% [markdown]
# Pretend hardware: each benchmark measured ten times with some jitter and
# a systematic offset.

# %%
offsets = {"divide": 1.04, "alu": 0.83, "chase": 1.12, "stream": 0.95, "pingpong": 1.31}
refs = []
for name, r in sims.items():
    base = r.total_cycles * offsets[name]
    refs.append(ReferenceMeasurement(name, tuple(round(base * (1 + (k - 4.5) / 400))
                                                 for k in range(10)), "demo-box"))
print(render_text(compare_report(sims, refs)))

# %% [markdown]
# The same comparison through the command line: traces on disk (one file
# per thread for multithreaded benchmarks), a reference CSV, and report
# files written next to a prefix.

# %%
with tempfile.TemporaryDirectory() as tmp:
    tmp = pathlib.Path(tmp)
    sim_dir = tmp / "sim"
    sim_dir.mkdir()
    for name, traces in suite.items():
        if name == "pingpong":
            for i, stream in enumerate(traces):
                write_trace(sim_dir / f"{name}.t{i}.trace", stream)
        else:
            write_trace(sim_dir / f"{name}.trace", traces[0])
    (tmp / "ref.csv").write_text(write_reference_csv(refs))
    code = cli_main(["validate", "--sim", str(sim_dir), "--ref", str(tmp / "ref.csv"),
                     "--out", str(tmp / "result")])
    print("exit status", code)
    print((tmp / "result.dat").read_text())
