"""deltabench command line: run, analyze, report, oracle.

Exit codes: 0 success, 1 analysis/validation/oracle failure, 2 config or IO error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, asdict
from pathlib import Path

from . import __version__
from .analysis import (
    AnalysisError,
    chi_events_csv,
    delta_report_json,
    global_delta,
    key_delta,
    parse_chi_csv,
    scored_history,
)
from .oracle import K_BOUND, LINEARIZABILITY_BOUND, oracle_delta, oracle_k
from .report import DEFAULT_BIN_WIDTH_US, chi_histogram, chi_timeseries, render_svg
from .simulate import load_config
from .trace import (
    FATAL_CODES,
    TraceError,
    adjust_clocks,
    gc_paused,
    load_offsets,
    read_trace,
    serialize_trace,
    validate,
)
from .workload import ConfigError

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


@dataclass
class RunManifest:
    config_sha256: str
    seed: int
    trace_path: str
    operations: int
    tool_version: str
    wall_clock_s: float


def _err(msg: str) -> None:
    print(f"deltabench: {msg}", file=sys.stderr)


def cmd_run(config_path, out_trace_path, seed: int | None = None) -> int:
    t0 = time.perf_counter()
    try:
        raw = Path(config_path).read_bytes()
        exp = load_config(raw)
        if seed is not None:
            exp = exp.with_seed(seed)
    except (OSError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    trace = exp.run()
    manifest = RunManifest(
        config_sha256=hashlib.sha256(raw).hexdigest(),
        seed=exp.sim.seed,
        trace_path=str(out_trace_path),
        operations=len(trace),
        tool_version=__version__,
        wall_clock_s=0.0,
    )
    try:
        Path(out_trace_path).write_bytes(serialize_trace(trace))
        manifest.wall_clock_s = round(time.perf_counter() - t0, 3)
        Path(str(out_trace_path) + ".manifest.json").write_text(json.dumps(asdict(manifest), indent=1) + "\n")
    except OSError as exc:
        _err(str(exc))
        return EXIT_USAGE
    print(f"operations={len(trace)} seed={exp.sim.seed} trace={out_trace_path}")
    return EXIT_OK


def cmd_analyze(trace_path, report_out=None, chi_csv_out=None, offsets_path=None) -> int:
    try:
        trace = read_trace(trace_path)
        if offsets_path is not None:
            trace = adjust_clocks(trace, load_offsets(Path(offsets_path).read_bytes()))
        with gc_paused():
            trace.columns
    except (OSError, TraceError, OverflowError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    with gc_paused():
        vr = validate(trace)
    for a in vr.anomalies:
        level = "error" if a.code in FATAL_CODES else "warning"
        _err(f"{level}: {a.code} at op {a.index}: {a.message}")
    if not vr.ok:
        return EXIT_FAIL
    try:
        report = global_delta(trace)
    except AnalysisError as exc:
        _err(str(exc))
        return EXIT_FAIL
    events = report.chi_events()
    try:
        if report_out is not None:
            Path(report_out).write_bytes(delta_report_json(report))
        if chi_csv_out is not None:
            Path(chi_csv_out).write_bytes(chi_events_csv(events))
    except OSError as exc:
        _err(str(exc))
        return EXIT_USAGE
    g = report.global_delta_us
    print(f"global_delta_us={g} keys={len(report.per_key)} stale_reads={len(events)}")
    print(f"global_delta_ms={g / 1000:.3f}")
    return EXIT_OK


def cmd_report(chi_csv, hist_svg_out, ts_svg_out, bin_width_us: int = DEFAULT_BIN_WIDTH_US) -> int:
    if bin_width_us <= 0:
        _err("--bin-width-us must be positive")
        return EXIT_USAGE
    try:
        events = parse_chi_csv(Path(chi_csv).read_bytes())
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    hist = chi_histogram(events, bin_width_us)
    series = chi_timeseries(events)
    try:
        Path(hist_svg_out).write_bytes(render_svg(hist, title="Histogram of chi values"))
        Path(ts_svg_out).write_bytes(render_svg(series, title="Time series of chi values"))
    except OSError as exc:
        _err(str(exc))
        return EXIT_USAGE
    if hist.total:
        print(f"events={hist.total} min_us={hist.min} median_us={hist.median} p99_us={hist.p99} max_us={hist.max}")
    else:
        print("events=0")
    return EXIT_OK


def cmd_oracle(trace_path, max_ops: int = LINEARIZABILITY_BOUND, max_ops_k: int = K_BOUND) -> int:
    try:
        trace = read_trace(trace_path)
    except (OSError, TraceError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    status = EXIT_OK
    for key, ops in sorted(trace.by_key().items()):
        try:
            direct = key_delta(ops, key).delta_us
            hist = scored_history(ops)
            d = oracle_delta(hist, max_ops)
            k = oracle_k(hist, max_ops_k)
        except AnalysisError as exc:
            _err(str(exc))
            return EXIT_FAIL
        line = f"key={key} oracle_delta_us={d} oracle_k={k} direct_delta_us={direct}"
        if d != direct:
            line += " MISMATCH"
            _err(f"analyzer disagrees with oracle on key {key!r}: direct={direct} oracle={d}")
            status = EXIT_FAIL
        print(line)
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deltabench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"deltabench {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a configured experiment and write its trace")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="trace JSONL output path")
    r.add_argument("--seed", type=int, help="override the config seed")

    a = sub.add_parser("analyze", help="compute per-key and global Delta for a trace")
    a.add_argument("--trace", required=True)
    a.add_argument("--out", help="DeltaReport JSON output path")
    a.add_argument("--chi-csv", help="ChiEvent CSV output path")
    a.add_argument("--offsets", help="JSON client -> clock offset (us) to subtract")

    rp = sub.add_parser("report", help="render histogram and time-series SVGs from a chi CSV")
    rp.add_argument("--chi-csv", required=True)
    rp.add_argument("--hist-svg", required=True)
    rp.add_argument("--ts-svg", required=True)
    rp.add_argument("--bin-width-us", type=int, default=DEFAULT_BIN_WIDTH_US)

    o = sub.add_parser("oracle", help="cross-check small per-key histories by exhaustive search")
    o.add_argument("--trace", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command == "run":
        if args.seed is not None and not 0 <= args.seed < 2**64:
            _err("--seed must be an unsigned 64-bit integer")
            return EXIT_USAGE
        return cmd_run(args.config, args.out, args.seed)
    if args.command == "analyze":
        return cmd_analyze(args.trace, args.out, args.chi_csv, args.offsets)
    if args.command == "report":
        return cmd_report(args.chi_csv, args.hist_svg, args.ts_svg, args.bin_width_us)
    return cmd_oracle(args.trace)


if __name__ == "__main__":
    sys.exit(main())
