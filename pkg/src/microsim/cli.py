"""Command line front end.

    microsim run <config> <trace...> [--report text|csv|jsonl] [--out PATH]
    microsim validate --sim DIR --ref CSV [--config CFG] [--out PREFIX]
    microsim gen <pattern> <n> [key=value ...] --out PATH
    microsim check-config <config>

Exit status: 0 ok, 1 config violations found, 2 bad input or usage.
``<config>`` may be the word ``default`` for the built-in machine.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import default_sandybridge, load_config, validate_config
from .engine import collect_report, parse_report, simulate
from .errors import MicrosimError
from .trace import TraceStream, gen_microtrace, read_trace_stream, write_trace
from .validate import (compare_report, parse_reference_csv, render_csv, render_gnuplot,
                       render_text)

EXIT_OK, EXIT_VIOLATIONS, EXIT_INPUT = 0, 1, 2

TRACE_RE = re.compile(r"^(?P<bench>.+?)(?:\.t(?P<thread>\d+))?\.trace(?:\.gz)?$")


def _config(path: str):
    return default_sandybridge() if path == "default" else load_config(path)


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _parse_param(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise MicrosimError("BAD_PARAMS", f"expected key=value, got {text!r}")
    low = value.lower()
    if low in ("true", "yes", "on"):
        return key, True
    if low in ("false", "no", "off"):
        return key, False
    try:
        return key, int(value, 0)
    except ValueError:
        raise MicrosimError("BAD_PARAMS", f"{key}: expected an integer or boolean, "
                                          f"got {value!r}") from None


def _simulate_files(cfg, paths: list[str]):
    traces = [read_trace_stream(p, i) for i, p in enumerate(paths)]
    return simulate(cfg, traces)


def _bench_cycles(job):
    cfg, paths = job
    return _simulate_files(cfg, paths).total_cycles


def _collect_sims(sim_dir: Path, cfg) -> dict[str, int]:
    results: dict[str, int] = {}
    groups: dict[str, list[tuple[int, Path]]] = defaultdict(list)
    for p in sorted(sim_dir.iterdir()):
        if p.suffix == ".jsonl":
            results[p.stem] = parse_report(p.read_text(), "JSONL").total_cycles
        elif p.suffix == ".csv":
            results[p.stem] = parse_report(p.read_text(), "CSV").total_cycles
        else:
            m = TRACE_RE.match(p.name)
            if m:
                groups[m["bench"]].append((int(m["thread"] or 0), p))
    todo = {b: [str(p) for _, p in sorted(g)] for b, g in groups.items() if b not in results}
    if todo:
        jobs = int(os.environ.get("MICROSIM_JOBS", os.cpu_count() or 1))
        names = sorted(todo)
        work = [(cfg, todo[b]) for b in names]
        if jobs <= 1 or len(work) == 1:
            cycles = [_bench_cycles(w) for w in work]
        else:
            with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as ex:
                cycles = list(ex.map(_bench_cycles, work))
        results.update(zip(names, cycles))
    return results


def _cmd_run(args) -> int:
    cfg = _config(args.config)
    report = _simulate_files(cfg, args.traces)
    _write(collect_report(report, args.report), args.out)
    return EXIT_OK


def _cmd_validate(args) -> int:
    sim_dir = Path(args.sim)
    if not sim_dir.is_dir():
        raise MicrosimError("NOT_A_DIRECTORY", f"{sim_dir} is not a directory")
    refs = parse_reference_csv(Path(args.ref).read_text(encoding="utf-8"))
    cfg = _config(args.config)
    rep = compare_report(_collect_sims(sim_dir, cfg), refs)
    text = render_text(rep)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.with_suffix(".txt").write_text(text, encoding="utf-8")
        out.with_suffix(".csv").write_text(render_csv(rep), encoding="utf-8")
        out.with_suffix(".dat").write_text(render_gnuplot(rep), encoding="utf-8")
    return EXIT_OK


def _cmd_gen(args) -> int:
    params = dict(_parse_param(p) for p in args.params)
    made = gen_microtrace(args.pattern, args.n, **params)
    if isinstance(made, TraceStream):
        write_trace(args.out, made)
    else:
        for i, stream in enumerate(made):
            write_trace(f"{args.out}.t{i}.trace", stream)
    return EXIT_OK


def _cmd_check(args) -> int:
    bad = validate_config(_config(args.config))
    for v in bad:
        print(v)
    if not bad:
        print("ok")
    return EXIT_VIOLATIONS if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="microsim",
                                 description="Trace-driven multicore timing simulator.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="simulate traces, one per core")
    p.add_argument("config")
    p.add_argument("traces", nargs="+")
    p.add_argument("--report", default="text", choices=["text", "csv", "jsonl"])
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("validate", help="compare simulated and measured cycles")
    p.add_argument("--sim", required=True,
                   help="directory of <bench>.jsonl/.csv reports or <bench>[.tN].trace files")
    p.add_argument("--ref", required=True, help="reference CSV")
    p.add_argument("--config", default="default", help="machine used to simulate traces")
    p.add_argument("--out", help="prefix for .txt, .csv and .dat outputs")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("gen", help="write a synthetic microtrace")
    p.add_argument("pattern")
    p.add_argument("n", type=int)
    p.add_argument("params", nargs="*", metavar="key=value")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("check-config", help="report config violations")
    p.add_argument("config")
    p.set_defaults(fn=_cmd_check)
    return ap


def cli_main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        return args.fn(args)
    except MicrosimError as e:
        print(f"microsim: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"microsim: {e}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(cli_main())
