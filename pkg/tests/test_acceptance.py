"""End-to-end acceptance checks.

Each test is marked ``criterion``; the run ends with one PASS/FAIL line per
criterion under the "acceptance criteria" summary heading.
"""

import json
import random
import statistics
import subprocess
import sys
import time

import pytest

from deltabench.analysis import global_delta, key_delta, parse_chi_csv, read_staleness
from deltabench.cli import main
from deltabench.oracle import check_linearizable, oracle_delta, oracle_k
from deltabench.report import chi_histogram
from deltabench.simulate import (
    ALL,
    ONE,
    PARTITION_END,
    PARTITION_START,
    Distribution,
    FaultEvent,
    FaultScript,
    SimConfig,
    SkewSpec,
    replicas_for_key,
    run_simulation,
)
from deltabench.trace import GET, PUT, adjust_clocks, serialize_trace
from deltabench.workload import OpIntent, ScriptedOp, ScriptedWorkload, WorkloadSpec

from helpers import figure1, random_history
from synth import stale_store_trace


def positive_chis(trace):
    return [e.chi_us for e in global_delta(trace).chi_events() if e.chi_us > 0]


@pytest.mark.criterion("1 direct Delta equals exhaustive oracle on random small histories")
def test_direct_matches_oracle(measured):
    rng = random.Random(2024)
    n = 1500
    t0 = time.perf_counter()
    mismatches = []
    for _ in range(n):
        h = random_history(rng, n_max=8, v_max=3, horizon=40, span=15, causal=True)
        direct = key_delta(h, "k").delta_us
        oracle = oracle_delta(h)
        if direct != oracle or check_linearizable(h) != (direct == 0):
            mismatches.append((h, direct, oracle))
    elapsed = time.perf_counter() - t0
    measured.update(histories=n, mismatches=len(mismatches), seconds=round(elapsed, 2))
    assert not mismatches, mismatches[:3]
    assert elapsed < 60


@pytest.mark.criterion("2 three-write example: chi {8,10}, Delta 10, oracle Delta 10, k 2")
def test_three_write_example(measured):
    h = figure1()
    chis = sorted(e.chi_us for e in read_staleness(h, "k"))
    d = key_delta(h, "k").delta_us
    od, k = oracle_delta(h), oracle_k(h)
    measured.update(chi=chis, delta=d, oracle_delta=od, k=k)
    assert chis == [8, 10]
    assert d == od == 10
    assert k == 2


@pytest.mark.criterion("3 strict quorums (ALL/ALL) never produce staleness")
def test_strict_quorum_is_atomic(measured):
    t0 = time.perf_counter()
    worst, events, ops = 0, 0, 0
    for seed in range(100):
        cfg = SimConfig(node_count=5, replication_factor=3, write_cl=ALL, read_cl=ALL,
                        latency_model=Distribution("lognormal", {"mu": 6.5, "sigma": 1.0}),
                        client_latency=Distribution("uniform", {"low": 50, "high": 400}), seed=seed)
        w = WorkloadSpec(key_count=20, read_fraction=0.7, client_count=8, op_limit=500)
        trace = run_simulation(cfg, w)
        rep = global_delta(trace)
        ops += len(trace)
        worst = max(worst, rep.global_delta_us)
        events += rep.stale_reads
    elapsed = time.perf_counter() - t0
    measured.update(runs=100, ops=ops, max_delta=worst, chi_events=events, seconds=round(elapsed, 2))
    assert ops == 100 * 500
    assert worst == 0 and events == 0
    assert elapsed < 30


@pytest.mark.criterion("4 weak quorums (ONE/ONE) give a long-tailed chi distribution")
def test_weak_quorum_long_tail(measured):
    t0 = time.perf_counter()
    cfg = SimConfig(node_count=10, replication_factor=3, write_cl=ONE, read_cl=ONE,
                    latency_model=Distribution("lognormal", {"mu": 6.2, "sigma": 1.5}), seed=7)
    w = WorkloadSpec(key_count=1000, read_fraction=0.8, hot_key_fraction=0.2, hot_op_fraction=0.8,
                     client_count=32, duration_us=60_000_000, think_time_us=10_000, preload=True)
    trace = run_simulation(cfg, w)
    chis = positive_chis(trace)
    elapsed = time.perf_counter() - t0
    med = statistics.median_low(chis) if chis else None
    measured.update(ops=len(trace), chi_events=len(chis), median=med, max=max(chis, default=None),
                    seconds=round(elapsed, 2))
    assert chis
    assert med <= 0.2 * max(chis)
    assert elapsed < 60


@pytest.mark.parametrize("link", [1000, 1300])
@pytest.mark.criterion("5 immediate read from a lagging replica: max chi within [D-2L, D]")
def test_immediate_read_bound(measured, link):
    D = 100_000
    cfg = SimConfig(node_count=3, replication_factor=3, write_cl=ONE, read_cl=ONE,
                    latency_model=Distribution.constant(D), client_latency=Distribution.constant(link),
                    op_timeout_us=10 * D)
    writer_node, reader_node = replicas_for_key("k", 3, 3)[:2]
    reads = [ScriptedOp(OpIntent(GET, "k", coordinator=reader_node), link)]
    reads += [ScriptedOp(OpIntent(GET, "k", coordinator=reader_node))] * (2 * D // link)
    script = {
        "writer": [ScriptedOp(OpIntent(PUT, "k", "v1", coordinator=writer_node), 0)],
        "reader": reads,
    }
    trace = run_simulation(cfg, ScriptedWorkload(script))
    chi = max(positive_chis(trace), default=0)
    measured.update(D=D, L=link, max_chi=chi)
    assert D - 2 * link <= chi <= D


@pytest.mark.criterion("6 a partition raises staleness above its pre-partition level")
def test_partition_raises_staleness(measured):
    start, end = 10_000_000, 20_000_000
    cfg = SimConfig(node_count=10, replication_factor=3, write_cl=ONE, read_cl=ONE,
                    latency_model=Distribution("lognormal", {"mu": 6.2, "sigma": 0.8}), seed=3)
    w = WorkloadSpec(key_count=200, client_count=16, duration_us=30_000_000, think_time_us=5_000)
    faults = FaultScript((FaultEvent(PARTITION_START, start, frozenset({3})),
                          FaultEvent(PARTITION_END, end, frozenset({3}))))
    events = [e for e in global_delta(run_simulation(cfg, w, faults)).chi_events() if e.chi_us > 0]
    before = max((e.chi_us for e in events if e.at_us < start), default=0)
    after = max((e.chi_us for e in events if e.at_us >= start), default=0)
    measured.update(pre_max=before, during_after_max=after)
    assert after > before


@pytest.mark.criterion("7 bounded clock skew: ALL/ALL chi <= 2*eps, zero after offset correction")
def test_skew_bound(measured):
    eps = 1000
    # every op outlasts 2*eps in the first regime; the second is fast enough
    # for skew to make some reads look stale
    regimes = [({"low": 1000, "high": 3000}, 200, 1_000_000), ({"low": 500, "high": 1500}, 100, 500_000)]
    worst, worst_fixed, events = 0, 0, []
    for latency, link, duration in regimes:
        n = 0
        for seed in range(10):
            rng = random.Random(seed)
            w = WorkloadSpec(key_count=2, read_fraction=0.5, client_count=16, duration_us=duration)
            offsets = {c: rng.choice([-eps, eps, rng.randint(-eps, eps)]) for c in w.client_names()}
            cfg = SimConfig(node_count=5, replication_factor=3, write_cl=ALL, read_cl=ALL,
                            latency_model=Distribution("uniform", latency),
                            client_latency=Distribution.constant(link), seed=seed)
            trace = run_simulation(cfg, w, skew=SkewSpec(offsets))
            chis = positive_chis(trace)
            n += len(chis)
            worst = max([worst, *chis])
            worst_fixed = max(worst_fixed, global_delta(adjust_clocks(trace, offsets)).global_delta_us)
        events.append(n)
    measured.update(eps=eps, skewed_events=events, max_chi=worst, corrected_delta=worst_fixed)
    assert events[1] > 0
    assert worst <= 2 * eps
    assert worst_fixed == 0


@pytest.fixture(scope="module")
def million_op_trace(tmp_path_factory):
    path = tmp_path_factory.mktemp("scale") / "trace.jsonl"
    path.write_bytes(serialize_trace(stale_store_trace(1_000_000, 1000, seed=11)))
    return path


@pytest.mark.criterion("8 analyze a 10^6-op, 1000-key trace in under 10 s; histogram is consistent")
def test_scale_analyze(measured, million_op_trace, tmp_path):
    report, chi_csv = tmp_path / "report.json", tmp_path / "chi.csv"
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "deltabench.cli", "analyze", "--trace", str(million_op_trace),
                           "--out", str(report), "--chi-csv", str(chi_csv)], capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    assert proc.returncode == 0, proc.stderr
    doc = json.loads(report.read_text())
    events = parse_chi_csv(chi_csv.read_bytes())
    hist = chi_histogram(events)
    measured.update(seconds=round(elapsed, 2), keys=len(doc["per_key"]), chi_events=len(events),
                    global_delta=doc["global_delta_us"], hist_max=hist.max)
    assert len(doc["per_key"]) == 1000
    assert sum(hist.counts) == hist.total == len(events)
    assert hist.max == doc["global_delta_us"]
    assert main(["report", "--chi-csv", str(chi_csv), "--hist-svg", str(tmp_path / "h.svg"),
                 "--ts-svg", str(tmp_path / "t.svg")]) == 0
    assert elapsed < 10
