"""Operation/trace data model, JSONL trace format, validation and clock adjustment."""

from __future__ import annotations

import gc
import json
import re
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple

import numpy as np

GET = "get"
PUT = "put"
OK = "ok"
FAILED = "failed"

KINDS = (GET, PUT)
STATUSES = (OK, FAILED)

# value returned by a get that produced nothing (only legal on failed gets)
EMPTY = ""

DUPLICATE_PUT_VALUE = "DUPLICATE_PUT_VALUE"
PHANTOM_READ = "PHANTOM_READ"
NEGATIVE_DURATION = "NEGATIVE_DURATION"
FUTURE_READ = "FUTURE_READ"
FATAL_CODES = frozenset({DUPLICATE_PUT_VALUE, NEGATIVE_DURATION})

FIELDS = ("client", "key", "kind", "value", "start_us", "finish_us", "status")

_INIT_PREFIX = "init:"
_INT64_MIN = -(2**63)
_INT64_MAX = 2**63 - 1


class TraceError(ValueError):
    """Raised for malformed trace or offset input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Operation(NamedTuple):
    client: str
    key: str
    kind: str
    value: str
    start_us: int
    finish_us: int
    status: str = OK

    @property
    def is_get(self) -> bool:
        return self.kind == GET

    @property
    def is_put(self) -> bool:
        return self.kind == PUT

    @property
    def ok(self) -> bool:
        return self.status == OK


def initial_value(key: str) -> str:
    """The distinguished value a key holds before its first logged put."""
    return _INIT_PREFIX + key


@dataclass(frozen=True)
class Trace:
    operations: tuple[Operation, ...] = ()
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.operations, tuple):
            object.__setattr__(self, "operations", tuple(self.operations))

    def __len__(self) -> int:
        return len(self.operations)

    def __iter__(self):
        return iter(self.operations)

    def keys(self) -> list[str]:
        return sorted({op.key for op in self.operations})

    def by_key(self) -> dict[str, list[Operation]]:
        groups: dict[str, list[Operation]] = {}
        for op in self.operations:
            groups.setdefault(op.key, []).append(op)
        return groups

    def for_key(self, key: str) -> list[Operation]:
        return [op for op in self.operations if op.key == key]

    @cached_property
    def columns(self) -> "Columns":
        if not self.operations:
            return _columns(((),) * 7)
        return _columns(tuple(zip(*self.operations)))


class Columns(NamedTuple):
    """Array view of a trace, one row per operation.

    Operations sharing a (key, value) pair share a ``cid``; ``pairs[cid]``
    gives the pair back.
    """
    key_names: list[str]
    kid: np.ndarray
    is_put: np.ndarray
    ok: np.ndarray
    start: np.ndarray
    finish: np.ndarray
    cid: np.ndarray
    pairs: list[tuple[str, str]]
    ckey: np.ndarray
    cinit: np.ndarray


def _factorize(items):
    """Dense ids in first-seen order: (id array, distinct items)."""
    ids = dict.fromkeys(items)
    for i, k in enumerate(ids):
        ids[k] = i
    return np.fromiter(map(ids.__getitem__, items), np.int64, len(items)), list(ids)


def _columns(cols) -> Columns:
    """Build a Columns view from per-field sequences in FIELDS order."""
    _, keys, kinds, values, starts, finishes, statuses = cols
    n = len(keys)
    key_names = sorted(set(keys))
    kmap = {k: i for i, k in enumerate(key_names)}
    kid = np.fromiter(map(kmap.__getitem__, keys), np.int64, n)
    try:
        start = np.array(starts, dtype=np.int64)
        finish = np.array(finishes, dtype=np.int64)
    except OverflowError:
        raise TraceError("timestamps must fit in a signed 64-bit integer") from None
    # factorize values alone (str hashes are cached) and then combine with key ids
    vid, distinct = _factorize(values)
    nv = max(len(distinct), 1)
    uniq, cid = np.unique(kid * nv + vid, return_inverse=True)
    ks, vs = np.divmod(uniq, nv)
    pairs = [(key_names[k], distinct[v]) for k, v in zip(ks.tolist(), vs.tolist())]
    return Columns(
        key_names=key_names,
        kid=kid,
        is_put=np.fromiter(map(PUT.__eq__, kinds), bool, n),
        ok=np.fromiter(map(OK.__eq__, statuses), bool, n),
        start=start,
        finish=finish,
        cid=cid.reshape(-1),
        pairs=pairs,
        ckey=ks,
        cinit=np.fromiter((v == _INIT_PREFIX + k for k, v in pairs), bool, len(pairs)),
    )


class Anomaly(NamedTuple):
    code: str
    index: int
    message: str


@dataclass(frozen=True)
class ValidationReport:
    anomalies: tuple[Anomaly, ...] = ()

    @property
    def ok(self) -> bool:
        return not any(a.code in FATAL_CODES for a in self.anomalies)

    def codes(self) -> list[str]:
        return [a.code for a in self.anomalies]

    def count(self, code: str) -> int:
        return sum(1 for a in self.anomalies if a.code == code)


# --------------------------------------------------------------------------
# serialization


@contextmanager
def gc_paused():
    """Suspend cyclic GC while building many small acyclic objects."""
    was = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was:
            gc.enable()


def _check_record(obj, lineno: int) -> Operation:
    if not isinstance(obj, dict):
        raise TraceError("record is not a JSON object", lineno)
    try:
        client = obj["client"]
        key = obj["key"]
        kind = obj["kind"]
        value = obj["value"]
        start = obj["start_us"]
        finish = obj["finish_us"]
        status = obj["status"]
    except KeyError as exc:
        raise TraceError(f"missing required field {exc.args[0]!r}", lineno) from None
    for name, v in (("client", client), ("key", key), ("value", value)):
        if type(v) is not str:
            raise TraceError(f"field {name!r} must be a string", lineno)
    for name, v in (("start_us", start), ("finish_us", finish)):
        if type(v) is not int:
            raise TraceError(f"field {name!r} must be an integer", lineno)
    if kind != GET and kind != PUT:
        raise TraceError(f"field 'kind' must be 'get' or 'put', got {kind!r}", lineno)
    if status != OK and status != FAILED:
        raise TraceError(f"field 'status' must be 'ok' or 'failed', got {status!r}", lineno)
    if value == EMPTY and (kind == PUT or status == OK):
        raise TraceError("empty value is only allowed on failed gets", lineno)
    return Operation(client, key, kind, value, start, finish, status)


def _split_lines(data) -> list[str]:
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    if isinstance(data, str):
        # only \n ends a record; str.splitlines would also split on U+2028 inside values
        return [ln.rstrip("\r") for ln in data.split("\n")]
    out = []
    for line in data:
        if isinstance(line, (bytes, bytearray)):
            line = line.decode("utf-8")
        out.append(line.rstrip("\r\n"))
    return out


def parse_trace(data: bytes | str | Iterable[bytes | str]) -> Trace:
    """Parse JSON Lines trace data (a blob or an iterable of lines)."""
    with gc_paused():
        return _parse(data)


_STR = r'"([^"\\\x00-\x1f]*)"'
_INT = r"(-?(?:0|[1-9][0-9]*))"
# exactly the compact, escape-free form serialize_trace writes
_CANONICAL = re.compile(
    r'^\{"client":' + _STR + r',"key":' + _STR + r',"kind":"(get|put)","value":' + _STR
    + r',"start_us":' + _INT + r',"finish_us":' + _INT + r',"status":"(ok|failed)"\}$',
    re.M,
)


def _parse_canonical(text: str) -> Trace | None:
    """Regex fast path for canonical traces; None when any line needs the JSON decoder."""
    rows = _CANONICAL.findall(text)
    lines = text.count("\n") + (not text.endswith("\n"))
    if not rows or len(rows) != lines:
        return None
    cols = list(zip(*rows))
    if EMPTY in cols[3] and any(
            v == EMPTY and (k != GET or st != FAILED) for k, v, st in zip(cols[2], cols[3], cols[6])):
        return None
    cols[4] = list(map(int, cols[4]))
    cols[5] = list(map(int, cols[5]))
    t = Trace(tuple(map(Operation._make, zip(*cols))))
    # the column view comes for free here; seed the cached property
    t.__dict__["columns"] = _columns(cols)
    return t


def _parse(data) -> Trace:
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    if isinstance(data, str) and data:
        t = _parse_canonical(data)
        if t is not None:
            return t
    lines = _split_lines(data)
    numbered = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not numbered:
        return Trace(())
    try:
        # one bulk decode is several times faster than a loads() per line
        records = json.loads("[" + ",".join(ln for _, ln in numbered) + "]")
        if len(records) != len(numbered):
            raise ValueError("record count mismatch")
    except ValueError:
        records = []
        for lineno, ln in numbered:
            try:
                records.append(json.loads(ln))
            except ValueError as exc:
                raise TraceError(f"malformed JSON: {exc.msg}", lineno) from None
    ops = _bulk_records(records)
    if ops is None:
        ops = tuple(_check_record(rec, lineno) for (lineno, _), rec in zip(numbered, records))
    t = Trace(ops)
    t.columns  # range-checks timestamps, like the fast path
    return t


def _bulk_records(records: list) -> tuple[Operation, ...] | None:
    """Column-wise checks for the common all-valid case; None defers to per-record checks."""
    try:
        cols = [[r[f] for r in records] for f in FIELDS]
    except (KeyError, TypeError, IndexError):
        return None
    client, key, kind, value, start, finish, status = cols
    if not (set(map(type, client)) | set(map(type, key)) | set(map(type, value))) <= {str}:
        return None
    if not (set(map(type, start)) | set(map(type, finish))) <= {int}:
        return None
    if not set(kind) <= {GET, PUT} or not set(status) <= {OK, FAILED}:
        return None
    if EMPTY in value and any(v == EMPTY and (k != GET or st != FAILED) for k, v, st in zip(kind, value, status)):
        return None
    return tuple(map(Operation._make, zip(*cols)))


_NEEDS_ESCAPE = re.compile(r'["\\\x00-\x1f]')


def operation_to_json(op: Operation) -> str:
    client, key, kind, value, start, finish, status = op
    if _NEEDS_ESCAPE.search(client + key + kind + value + status) or type(start) is not int or type(finish) is not int:
        return json.dumps(dict(zip(FIELDS, op)), separators=(",", ":"), ensure_ascii=False)
    # same bytes json.dumps would give, several times faster
    return (f'{{"client":"{client}","key":"{key}","kind":"{kind}","value":"{value}",'
            f'"start_us":{start},"finish_us":{finish},"status":"{status}"}}')


def serialize_trace(t: Trace) -> bytes:
    if not t.operations:
        return b""
    return ("\n".join(operation_to_json(op) for op in t.operations) + "\n").encode("utf-8")


def read_trace(path) -> Trace:
    with open(path, "rb") as fh:
        return parse_trace(fh.read())


def write_trace(t: Trace, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_trace(t))


# --------------------------------------------------------------------------
# validation


def first_puts(c: Columns) -> np.ndarray:
    """Index of the first put of each (key, value) pair, -1 if never put."""
    puts = np.flatnonzero(c.is_put)
    first = np.full(len(c.pairs), -1, dtype=np.int64)
    u, at = np.unique(c.cid[puts], return_index=True)
    first[u] = puts[at]
    return first


def validate(t: Trace) -> ValidationReport:
    c = t.columns
    ops = t.operations
    found: list[tuple[int, int, Anomaly]] = []
    for i in np.flatnonzero(c.start > c.finish).tolist():
        op = ops[i]
        found.append((i, 0, Anomaly(NEGATIVE_DURATION, i, f"start {op.start_us} > finish {op.finish_us}")))

    first = first_puts(c)
    puts = np.flatnonzero(c.is_put)
    pc = c.cid[puts]
    for i in puts[(first[pc] != puts) | c.cinit[pc]].tolist():
        op = ops[i]
        if op.value == initial_value(op.key):
            msg = f"value {op.value!r} is the initial value of key {op.key!r}"
        else:
            msg = f"value {op.value!r} on key {op.key!r} already written (op {first[c.cid[i]]})"
        found.append((i, 1, Anomaly(DUPLICATE_PUT_VALUE, i, msg)))

    # reads are checked against the first put of their value; initial-value puts do not count
    written = (first >= 0) & ~c.cinit
    ws = np.where(written, c.start[np.maximum(first, 0)], 0)
    gets = np.flatnonzero(c.ok & ~c.is_put)
    gc_ = c.cid[gets]
    for i in gets[~written[gc_] & ~c.cinit[gc_]].tolist():
        op = ops[i]
        found.append((i, 2, Anomaly(PHANTOM_READ, i, f"value {op.value!r} never written to key {op.key!r}")))
    for i in gets[written[gc_] & (c.finish[gets] < ws[gc_])].tolist():
        op = ops[i]
        w = ws[c.cid[i]]
        found.append((i, 2, Anomaly(
            FUTURE_READ, i, f"read of {op.value!r} finished at {op.finish_us} before its put started at {w}")))
    found.sort(key=lambda x: x[:2])
    return ValidationReport(tuple(a for _, _, a in found))


# --------------------------------------------------------------------------
# clocks


def load_offsets(data: bytes | str) -> dict[str, int]:
    """Parse a clock-offset document: JSON object client -> integer microseconds."""
    try:
        obj = json.loads(data)
    except ValueError as exc:
        raise TraceError(f"malformed offsets JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise TraceError("offsets must be a JSON object")
    out = {}
    for client, off in obj.items():
        if type(off) is not int:
            raise TraceError(f"offset for {client!r} must be an integer")
        out[client] = off
    return out


def adjust_clocks(t: Trace, offsets: Mapping[str, int]) -> Trace:
    """Map logged timestamps to true time: true = logged - offset[client]."""
    ops = []
    for op in t.operations:
        off = offsets.get(op.client, 0)
        if off == 0:
            ops.append(op)
            continue
        start, finish = op.start_us - off, op.finish_us - off
        if not (_INT64_MIN <= start <= _INT64_MAX and _INT64_MIN <= finish <= _INT64_MAX):
            raise OverflowError(f"clock adjustment of {op.client!r} by {off} overflows int64")
        ops.append(op._replace(start_us=start, finish_us=finish))
    return Trace(tuple(ops), dict(t.metadata))
