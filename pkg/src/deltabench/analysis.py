"""Cluster construction, the chi scoring function and per-key / global Delta.

A key's history is split into clusters, one per distinct value: the put that
wrote it plus every ok get that returned it.  For each cluster ``c`` we use
three numbers:

* ``ws(c)``: start of its write,
* ``f(c)``: earliest finish of any member (``zone_low``),
* ``R(c)``: latest start of any of its reads.

Serializing cluster ``a`` entirely before cluster ``b`` is possible once every
read of ``a`` has been stretched back to ``f(b)``, provided ``ws(a) <= f(b)``.
The cost of that order is ``max(0, R(a) - f(b))`` (infinite if the write
condition fails).  The score of a pair is the cheaper of its two orders, and
Delta for the key is the largest pair score.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .trace import GET, OK, PUT, Operation, Trace, gc_paused, initial_value

AMBIGUOUS_CLUSTER = "AMBIGUOUS_CLUSTER"
SIZE_LIMIT = "SIZE_LIMIT"
NO_VALID_ORDER = "NO_VALID_ORDER"

# sentinels for the int64 score matrices
_INF = 2**62
_NO_READS = -(2**62)

# cap on score-matrix cells materialized at once
_BLOCK_CELLS = 1 << 22


class AnalysisError(Exception):
    def __init__(self, code: str, message: str, key: str | None = None):
        self.code = code
        self.key = key
        if key is not None:
            message = f"key {key!r}: {message}"
        super().__init__(f"{code}: {message}")


class Cluster(NamedTuple):
    key: str
    value: str
    write: Operation
    reads: tuple[Operation, ...] = ()
    initial: bool = False

    @property
    def members(self) -> tuple[Operation, ...]:
        return (self.write,) + self.reads

    @property
    def zone_low(self) -> int:
        f = self.write.finish_us
        for r in self.reads:
            if r.finish_us < f:
                f = r.finish_us
        return f

    @property
    def zone_high(self) -> int:
        return max(op.start_us for op in self.members)

    @property
    def last_read_start(self) -> int | None:
        return max((r.start_us for r in self.reads), default=None)


class ChiEvent(NamedTuple):
    key: str
    read: Operation | None
    chi_us: int
    at_us: int
    culprit_value: str


@dataclass(frozen=True)
class KeyReport:
    key: str
    delta_us: int = 0
    chi_events: tuple[ChiEvent, ...] = ()
    cluster_count: int = 0
    read_count: int = 0
    excluded_reads: int = 0


@dataclass(frozen=True)
class DeltaReport:
    per_key: Mapping[str, KeyReport] = field(default_factory=dict)

    @property
    def global_delta_us(self) -> int:
        return max((r.delta_us for r in self.per_key.values()), default=0)

    def chi_events(self) -> list[ChiEvent]:
        return [e for k in sorted(self.per_key) for e in self.per_key[k].chi_events]

    @property
    def stale_reads(self) -> int:
        return sum(len(r.chi_events) for r in self.per_key.values())


# --------------------------------------------------------------------------
# clusters


def _virtual_write(key: str, ops: Sequence[Operation]) -> Operation:
    # strictly before every logged operation on the key
    t = min((op.start_us for op in ops), default=0) - 1
    return Operation("", key, PUT, initial_value(key), t, t, OK)


def _split(ops: Sequence[Operation], key: str) -> tuple[list[Cluster], int, int]:
    """Clusters in version order, ok-read count and excluded-read count."""
    init = initial_value(key)
    puts: dict[str, Operation] = {}
    for op in ops:
        if op.kind == PUT:
            if op.value in puts or op.value == init:
                raise AnalysisError(AMBIGUOUS_CLUSTER, f"value {op.value!r} written more than once", key)
            puts[op.value] = op
    reads: dict[str, list[Operation]] = {}
    read_count = excluded = 0
    for op in ops:
        if op.kind != GET or op.status != OK:
            continue
        read_count += 1
        v = op.value
        w = puts.get(v)
        # phantom, or returned before its write began
        if (w is None and v != init) or (w is not None and op.finish_us < w.start_us):
            excluded += 1
            continue
        got = reads.get(v)
        if got is None:
            reads[v] = [op]
        else:
            got.append(op)
    clusters = [Cluster(key, v, w, tuple(reads.get(v, ()))) for v, w in puts.items()]
    if init in reads:
        clusters.append(Cluster(key, init, _virtual_write(key, ops), tuple(reads[init]), True))
    return version_order(clusters), read_count, excluded


def build_clusters(t: Trace | Iterable[Operation], key: str) -> list[Cluster]:
    """One cluster per distinct value on ``key``; phantom and future reads are left out."""
    ops = t.for_key(key) if isinstance(t, Trace) else [op for op in t if op.key == key]
    return _split(ops, key)[0]


def version_order(clusters: Iterable[Cluster]) -> list[Cluster]:
    return sorted(clusters, key=lambda c: (not c.initial, c.write.finish_us, c.write.start_us, c.value))


# --------------------------------------------------------------------------
# scoring


def _order_cost(first: Cluster, then: Cluster) -> float:
    """Stretch needed to serialize all of ``first`` before ``then``."""
    f = then.zone_low
    if first.write.start_us > f:
        return math.inf
    r = first.last_read_start
    return 0 if r is None else max(0, r - f)


def score_pair(older: Cluster, newer: Cluster) -> int:
    """Staleness charged to the interaction of two clusters of one key."""
    chi = min(_order_cost(older, newer), _order_cost(newer, older))
    # both orders blocked only if some read ends before its own write starts
    assert chi != math.inf, "pair cannot be serialized"
    return int(chi)


def _scalars(clusters: Sequence[Cluster]):
    n = len(clusters)
    ws = np.fromiter((c.write.start_us for c in clusters), np.int64, n)
    f = np.fromiter((c.zone_low for c in clusters), np.int64, n)
    r = np.fromiter(
        (max(op.start_us for op in c.reads) if c.reads else _NO_READS for c in clusters), np.int64, n)
    return ws, f, r


def _score(ws, f, R):
    """Return (delta, F, culprit) for one key's version-ordered cluster scalars.

    ``F[i]`` is the earliest zone_low among clusters that reads of ``i`` are
    charged against and ``culprit[i]`` the index of that cluster; rows
    without reads keep ``F = _INF``.
    """
    n = len(ws)
    F = np.full(n, _INF, dtype=np.int64)
    culprit = np.zeros(n, dtype=np.int64)
    if n < 2:
        return 0, F, culprit
    rows = np.flatnonzero(R != _NO_READS)
    cols = np.arange(n)
    step = max(1, _BLOCK_CELLS // n)
    delta = 0
    for lo in range(0, len(rows), step):
        ri = rows[lo:lo + step]
        # cost of putting the row cluster first, and the column cluster first
        c_rc = np.where(ws[ri, None] <= f[None, :], np.maximum(R[ri, None] - f[None, :], 0), _INF)
        c_cr = np.where(ws[None, :] <= f[ri, None], np.maximum(R[None, :] - f[ri, None], 0), _INF)
        chi = np.minimum(c_rc, c_cr)
        same = ri[:, None] == cols[None, :]
        chi[same] = 0
        delta = max(delta, int(chi.max()))
        # a pair is charged to the cheaper side; ties go to the older cluster
        before = ri[:, None] < cols[None, :]
        charged = np.where(before, c_rc <= c_cr, c_rc < c_cr) & ~same
        fm = np.where(charged, f[None, :], _INF)
        j = fm.argmin(axis=1)
        F[ri] = fm[np.arange(len(ri)), j]
        culprit[ri] = j
    return delta, F, culprit


def _analyze(ops: Trace | Sequence[Operation]) -> dict[str, KeyReport]:
    """Per-key reports for a multi-key history, built from column arrays.

    Mirrors :func:`_split` + :func:`_score` per key, but groups clusters for
    the whole trace at once.
    """
    t = ops if isinstance(ops, Trace) else Trace(tuple(ops))
    ops = t.operations
    if not ops:
        return {}
    c = t.columns
    key_names, kid, is_put, cid, pairs, ckey, cinit = c.key_names, c.kid, c.is_put, c.cid, c.pairs, c.ckey, c.cinit
    start, finish = c.start, c.finish
    K, C = len(key_names), len(pairs)
    ok_get = c.ok & ~is_put

    puts = np.flatnonzero(is_put)
    nput = np.bincount(cid[puts], minlength=C)
    bad = (nput > 1) | (cinit & (nput > 0))
    if bad.any():
        i = min(np.flatnonzero(bad).tolist(), key=lambda i: (ckey[i], i))
        k, v = pairs[i]
        raise AnalysisError(AMBIGUOUS_CLUSTER, f"value {v!r} written more than once", k)
    has_put = nput > 0
    ws = np.zeros(C, dtype=np.int64)
    wf = np.zeros(C, dtype=np.int64)
    ws[cid[puts]] = start[puts]
    wf[cid[puts]] = finish[puts]
    # the virtual initial write sits just before the key's first operation
    kmin = np.full(K, _INF, dtype=np.int64)
    np.minimum.at(kmin, kid, start)
    ws[cinit] = wf[cinit] = kmin[ckey[cinit]] - 1

    rc = cid[ok_get]
    # phantom reads, and reads that returned before their write began
    good = (has_put[rc] | cinit[rc]) & ~(has_put[rc] & (finish[ok_get] < ws[rc]))
    reads = np.flatnonzero(ok_get)[good]
    excluded = np.flatnonzero(ok_get)[~good]
    rcid = cid[reads]
    f = wf.copy()
    np.minimum.at(f, rcid, finish[reads])
    R = np.full(C, _NO_READS, dtype=np.int64)
    np.maximum.at(R, rcid, start[reads])
    nreads = np.bincount(rcid, minlength=C)
    live = np.flatnonzero(has_put | (cinit & (nreads > 0)))

    # version order: initial first, then write finish, write start, value
    order = live[np.lexsort((ws[live], wf[live], ~cinit[live], ckey[live]))]
    same = np.ones(len(order), dtype=bool)
    for a in (ckey, cinit, wf, ws):
        col = a[order]
        same[1:] &= col[1:] == col[:-1]
    same[:1] = False
    if same.any():
        # break remaining ties by value, run by run
        # each run of True marks the tail of a tied group that starts one earlier
        runs = np.flatnonzero(np.diff(np.r_[same, False].astype(np.int8)))
        for lo, hi in zip(runs[0::2].tolist(), runs[1::2].tolist()):
            order[lo:hi + 1] = sorted(order[lo:hi + 1].tolist(), key=lambda i: pairs[i][1])
    bounds = np.searchsorted(ckey[order], np.arange(K + 1))

    F = np.full(C, _INF, dtype=np.int64)
    culprit = np.zeros(C, dtype=np.int64)
    deltas = [0] * K
    for k in range(K):
        idx = order[bounds[k]:bounds[k + 1]]
        d, Fk, ck = _score(ws[idx], f[idx], R[idx])
        deltas[k] = d
        F[idx] = Fk
        culprit[idx] = idx[ck]

    lim = F[rcid]
    chi = start[reads] - np.where(lim == _INF, 0, lim)
    hit = np.flatnonzero((lim != _INF) & (chi > 0))
    events: list[list[ChiEvent]] = [[] for _ in range(K)]
    for j in hit:
        i = int(reads[j])
        op = ops[i]
        events[kid[i]].append(ChiEvent(op.key, op, int(chi[j]), op.finish_us, pairs[culprit[rcid[j]]][1]))

    read_count = np.bincount(kid[ok_get], minlength=K)
    excl = np.bincount(kid[excluded], minlength=K)
    ncl = np.bincount(ckey[live], minlength=K)
    out = {}
    for k, name in enumerate(key_names):
        ev = events[k]
        ev.sort(key=lambda e: (e.at_us, e.read.start_us, e.read.client))
        out[name] = KeyReport(name, deltas[k], tuple(ev), int(ncl[k]), int(read_count[k]), int(excl[k]))
    return out


def scored_history(ops: Iterable[Operation]) -> list[Operation]:
    """The ops the analyzer scores: failed gets, phantom and future reads dropped."""
    ops = list(ops)
    puts = {(op.key, op.value): op for op in ops if op.kind == PUT}
    out = []
    for op in ops:
        if op.kind == GET:
            if op.status != OK:
                continue
            if op.value != initial_value(op.key):
                w = puts.get((op.key, op.value))
                if w is None or op.finish_us < w.start_us:
                    continue
        out.append(op)
    return out


def _ops_for(t: Trace | Iterable[Operation], key: str) -> list[Operation]:
    if isinstance(t, Trace):
        return t.for_key(key)
    return [op for op in t if op.key == key]


def key_delta(t: Trace | Iterable[Operation], key: str) -> KeyReport:
    return _analyze(_ops_for(t, key)).get(key) or KeyReport(key)


def read_staleness(t: Trace | Iterable[Operation], key: str) -> list[ChiEvent]:
    """Per-read staleness events for one key, ordered by the time they occurred."""
    return list(key_delta(t, key).chi_events)


def global_delta(t: Trace | Iterable[Operation]) -> DeltaReport:
    with gc_paused():
        return DeltaReport(_analyze(t if isinstance(t, Trace) else list(t)))


analyze = global_delta


# --------------------------------------------------------------------------
# serialization

CHI_CSV_HEADER = ("key", "at_us", "chi_us", "culprit_value")


def delta_report_json(report: DeltaReport) -> bytes:
    doc = {
        "global_delta_us": report.global_delta_us,
        "per_key": {
            k: {
                "delta_us": r.delta_us,
                "read_count": r.read_count,
                "cluster_count": r.cluster_count,
                "excluded_reads": r.excluded_reads,
            }
            for k, r in sorted(report.per_key.items())
        },
    }
    return (json.dumps(doc, indent=1) + "\n").encode("utf-8")


def chi_events_csv(events: Iterable[ChiEvent]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CHI_CSV_HEADER)
    for e in events:
        w.writerow((e.key, e.at_us, e.chi_us, e.culprit_value))
    return buf.getvalue().encode("utf-8")


def parse_chi_csv(data: bytes | str) -> list[ChiEvent]:
    """Read a ChiEvent CSV back; the ``read`` field is not stored and comes back as None."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    rows = csv.reader(io.StringIO(data))
    header = next(rows, None)
    if header is None:
        return []
    if tuple(header) != CHI_CSV_HEADER:
        raise ValueError(f"unexpected chi CSV header {header!r}")
    events = []
    for n, row in enumerate(rows, start=2):
        if not row:
            continue
        try:
            key, at, chi, culprit = row
            events.append(ChiEvent(key, None, int(chi), int(at), culprit))
        except ValueError:
            raise ValueError(f"line {n}: malformed chi CSV row {row!r}") from None
    return events
