"""Compare simulated cycle counts with measured ones.

Per benchmark the error is ``100 * |simulated - reference| / reference``
where the reference is the mean over repeated hardware runs; a suite is
summarised by the plain mean of those per-benchmark errors and a histogram
over the bands below 10%, 10-20%, 20-30% and 30% or more.

Reference CSV::

    benchmark,machine_label,run_cycles
    mcf,R620,1200345;1198877;1201002

with ``run_cycles`` a ``;``-separated list of per-run cycle counts.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import ValidationError

BANDS = (("<10%", 0.0, 10.0), ("10-20%", 10.0, 20.0),
         ("20-30%", 20.0, 30.0), (">30%", 30.0, math.inf))


@dataclass(frozen=True)
class ReferenceMeasurement:
    benchmark: str
    runs: tuple[int, ...]
    machine_label: str = ""

    def __post_init__(self):
        if not self.runs:
            raise ValidationError("BAD_REFERENCE", f"{self.benchmark}: no runs")
        if any(r <= 0 for r in self.runs):
            raise ValidationError("BAD_REFERENCE", f"{self.benchmark}: run cycles must be > 0")

    @property
    def mean_cycles(self) -> float:
        return statistics.fmean(self.runs)


@dataclass(frozen=True)
class ComparisonRow:
    benchmark: str
    simulated_cycles: float
    reference_cycles: float
    abs_error_pct: float

    @property
    def signed_error_pct(self) -> float:
        """Positive when the simulator over-predicts.  Not part of the metric."""
        return 100.0 * (self.simulated_cycles - self.reference_cycles) / self.reference_cycles


@dataclass
class ValidationReport:
    rows: list[ComparisonRow]
    mean_abs_error_pct: float
    bands: dict[str, int]
    missing_simulation: list[str] = field(default_factory=list)
    missing_reference: list[str] = field(default_factory=list)


def absolute_error(simulated: float, reference: float) -> float:
    if reference <= 0:
        raise ValidationError("NON_POSITIVE_REFERENCE", f"reference must be > 0, got {reference}")
    return 100.0 * abs(simulated - reference) / reference


def mean_absolute_error(rows: Iterable[ComparisonRow | float]) -> float:
    errs = [r.abs_error_pct if isinstance(r, ComparisonRow) else float(r) for r in rows]
    if not errs:
        raise ValidationError("EMPTY_SET", "no comparison rows")
    return math.fsum(errs) / len(errs)


def band_of(err: float) -> str:
    for name, lo, hi in BANDS:
        if lo <= err < hi:
            return name
    raise ValueError(f"error {err} outside every band")


def _cycles(result) -> float:
    return getattr(result, "total_cycles", result)


def compare_report(sim_results: Mapping[str, object],
                   refs: Iterable[ReferenceMeasurement]) -> ValidationReport:
    """``sim_results`` maps benchmark name to a SimReport or a cycle count."""
    refs = list(refs)
    ref_names = {r.benchmark for r in refs}
    rows = []
    missing_sim = []
    for ref in refs:
        if ref.benchmark not in sim_results:
            missing_sim.append(ref.benchmark)
            continue
        sim = _cycles(sim_results[ref.benchmark])
        rows.append(ComparisonRow(ref.benchmark, sim, ref.mean_cycles,
                                  absolute_error(sim, ref.mean_cycles)))
    missing_ref = sorted(b for b in sim_results if b not in ref_names)
    if not rows:
        raise ValidationError("NO_OVERLAP", "no benchmark has both a simulation and a reference")
    bands = {name: 0 for name, _, _ in BANDS}
    for r in rows:
        bands[band_of(r.abs_error_pct)] += 1
    return ValidationReport(rows, mean_absolute_error(rows), bands, missing_sim, missing_ref)


# ------------------------------------------------------------------- I/O

def parse_reference_csv(text: str) -> list[ReferenceMeasurement]:
    reader = csv.DictReader(io.StringIO(text))
    need = {"benchmark", "machine_label", "run_cycles"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise ValidationError("BAD_REFERENCE", f"header must contain {sorted(need)}")
    out = []
    for lineno, d in enumerate(reader, 2):
        try:
            runs = tuple(int(x) for x in d["run_cycles"].split(";") if x.strip())
        except ValueError:
            raise ValidationError("BAD_REFERENCE", f"bad run_cycles {d['run_cycles']!r}",
                                  line=lineno) from None
        out.append(ReferenceMeasurement(d["benchmark"].strip(), runs, d["machine_label"].strip()))
    return out


def write_reference_csv(refs: Iterable[ReferenceMeasurement]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["benchmark", "machine_label", "run_cycles"])
    for r in refs:
        w.writerow([r.benchmark, r.machine_label, ";".join(str(x) for x in r.runs)])
    return buf.getvalue()


def render_text(rep: ValidationReport) -> str:
    width = max([len(r.benchmark) for r in rep.rows] + [9])
    lines = [f"{'benchmark':<{width}}  {'simulated':>14}  {'reference':>14}  {'abs err %':>9}"]
    for r in rep.rows:
        lines.append(f"{r.benchmark:<{width}}  {r.simulated_cycles:>14.0f}  "
                     f"{r.reference_cycles:>14.1f}  {r.abs_error_pct:>9.2f}")
    lines.append(f"\nmean absolute error: {rep.mean_abs_error_pct:.2f}% over {len(rep.rows)} benchmarks")
    lines.append("bands: " + ", ".join(f"{k} {v}" for k, v in rep.bands.items()))
    if rep.missing_simulation:
        lines.append("no simulation for: " + ", ".join(rep.missing_simulation))
    if rep.missing_reference:
        lines.append("no reference for: " + ", ".join(rep.missing_reference))
    return "\n".join(lines) + "\n"


def render_csv(rep: ValidationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["benchmark", "simulated", "reference", "abs_error_pct",
                "signed_error_pct_nonnormative"])
    for r in rep.rows:
        w.writerow([r.benchmark, repr(r.simulated_cycles), repr(r.reference_cycles),
                    f"{r.abs_error_pct:.2f}", f"{r.signed_error_pct:.2f}"])
    return buf.getvalue()


def render_gnuplot(rep: ValidationReport) -> str:
    """Whitespace-separated columns for a clustered bar chart of errors.

    e.g. ``plot 'v.dat' using 1:5:xtic(2) with boxes``
    """
    lines = ["# index benchmark simulated reference abs_error_pct",
             f"# mean_abs_error_pct {rep.mean_abs_error_pct:.2f}"]
    for i, r in enumerate(rep.rows):
        lines.append(f"{i} {r.benchmark} {r.simulated_cycles:.0f} "
                     f"{r.reference_cycles:.1f} {r.abs_error_pct:.2f}")
    return "\n".join(lines) + "\n"
