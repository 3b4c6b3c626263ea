"""Deterministic discrete-event simulator of a quorum-replicated key-value store.

Cassandra-like mechanics: a coordinator stamps each put with a
(coordinator time, counter) version and sends it to every replica of the
key; the put is acknowledged to the client once the write consistency level
is met while the remaining replicas keep applying it in the background.
Reads ask every replica and return the highest version among the first
responses that satisfy the read consistency level.

Message timing: coordinator <-> replica messages take a ``latency_model``
sample each (zero when the coordinator is itself the replica); requests
reach the coordinator immediately and replies travel back over the client
link (``client_latency``).
"""

from __future__ import annotations

import heapq
import json
import hashlib
import zlib
from dataclasses import dataclass, field, fields
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import __version__
from .trace import EMPTY, FAILED, OK, PUT, Operation, Trace, initial_value
from .workload import ConfigError, OpIntent, WorkloadSpec, YcsbWorkload

ONE = "ONE"
QUORUM = "QUORUM"
ALL = "ALL"
CONSISTENCY_LEVELS = (ONE, QUORUM, ALL)

CRASH = "crash"
RECOVER = "recover"
PARTITION_START = "partition_start"
PARTITION_END = "partition_end"
FAULT_KINDS = (CRASH, RECOVER, PARTITION_START, PARTITION_END)

_SHAPE_PARAMS = {
    "constant": {"value"},
    "uniform": {"low", "high"},
    "exponential": {"mean", "min"},
    "lognormal": {"mu", "sigma", "min"},
}
_REQUIRED = {
    "constant": {"value"},
    "uniform": {"low", "high"},
    "exponential": {"mean"},
    "lognormal": {"mu", "sigma"},
}


@dataclass(frozen=True)
class Distribution:
    """Per-message delay in microseconds.

    lognormal ``mu``/``sigma`` are for the natural log of the delay; the
    optional ``min`` is a constant floor added to exponential and lognormal
    samples.
    """

    shape: str = "constant"
    params: Mapping[str, float] = field(default_factory=lambda: {"value": 1000})

    def __post_init__(self):
        if self.shape not in _SHAPE_PARAMS:
            raise ConfigError(f"unknown distribution shape {self.shape!r}")
        missing = _REQUIRED[self.shape] - set(self.params)
        extra = set(self.params) - _SHAPE_PARAMS[self.shape]
        if missing or extra:
            raise ConfigError(f"{self.shape} distribution: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in self.params.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"distribution parameter {k!r} must be a number")
        p = self.params
        if self.shape == "constant" and p["value"] < 0:
            raise ConfigError("constant delay must be >= 0")
        if self.shape == "uniform" and not 0 <= p["low"] <= p["high"]:
            raise ConfigError("uniform delay needs 0 <= low <= high")
        if self.shape == "exponential" and p["mean"] <= 0:
            raise ConfigError("exponential mean must be > 0")
        if self.shape == "lognormal" and p["sigma"] < 0:
            raise ConfigError("lognormal sigma must be >= 0")
        if p.get("min", 0) < 0:
            raise ConfigError("distribution min must be >= 0")

    @classmethod
    def constant(cls, value: int) -> "Distribution":
        return cls("constant", {"value": value})

    @classmethod
    def from_dict(cls, d: Mapping) -> "Distribution":
        if not isinstance(d, Mapping) or "shape" not in d:
            raise ConfigError(f"distribution must be an object with a 'shape', got {d!r}")
        return cls(d["shape"], {k: v for k, v in d.items() if k != "shape"})

    def to_dict(self) -> dict:
        return {"shape": self.shape, **self.params}

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = self.params
        if self.shape == "constant":
            return np.full(n, int(round(p["value"])), dtype=np.int64)
        if self.shape == "uniform":
            return rng.integers(int(round(p["low"])), int(round(p["high"])), n, endpoint=True)
        if self.shape == "exponential":
            x = rng.exponential(p["mean"], n)
        else:
            x = rng.lognormal(p["mu"], p["sigma"], n)
        # cap absurd tail samples (about 31 simulated years) so int64 cannot overflow
        return np.rint(np.minimum(x + p.get("min", 0), 1e15)).astype(np.int64)

    def sampler(self, rng: np.random.Generator, batch: int = 1 << 16):
        """Return a zero-argument callable yielding successive integer delays."""
        if self.shape == "constant":
            v = int(round(self.params["value"]))
            return lambda: v
        return _Stream(self, rng, batch)


class _Stream:
    __slots__ = ("dist", "rng", "batch", "buf", "i")

    def __init__(self, dist: Distribution, rng: np.random.Generator, batch: int):
        self.dist, self.rng, self.batch = dist, rng, batch
        self.buf: list[int] = []
        self.i = 0

    def __call__(self) -> int:
        if self.i == len(self.buf):
            self.buf = self.dist.draw(self.rng, self.batch).tolist()
            self.i = 0
        v = self.buf[self.i]
        self.i += 1
        return v


@dataclass(frozen=True)
class SimConfig:
    node_count: int = 3
    replication_factor: int = 3
    write_cl: str = ONE
    read_cl: str = ONE
    latency_model: Distribution = field(default_factory=lambda: Distribution.constant(1000))
    client_latency: Distribution = field(default_factory=lambda: Distribution.constant(200))
    op_timeout_us: int = 1_000_000
    read_repair: bool = False
    seed: int = 0

    def __post_init__(self):
        if type(self.node_count) is not int or self.node_count < 1:
            raise ConfigError("node_count must be a positive integer")
        if type(self.replication_factor) is not int or not 1 <= self.replication_factor <= self.node_count:
            raise ConfigError(
                f"replication_factor must be in [1, node_count={self.node_count}], got {self.replication_factor!r}")
        for name in ("write_cl", "read_cl"):
            if getattr(self, name) not in CONSISTENCY_LEVELS:
                raise ConfigError(f"{name} must be one of {CONSISTENCY_LEVELS}")
        if type(self.op_timeout_us) is not int or self.op_timeout_us <= 0:
            raise ConfigError("op_timeout_us must be a positive integer")
        if type(self.seed) is not int or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for name in ("latency_model", "client_latency"):
            if not isinstance(getattr(self, name), Distribution):
                raise ConfigError(f"{name} must be a Distribution")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown sim fields: {sorted(extra)}")
        d = dict(d)
        for name in ("latency_model", "client_latency"):
            if name in d:
                d[name] = Distribution.from_dict(d[name])
        return cls(**d)


class FaultEvent(NamedTuple):
    kind: str
    at_us: int
    # crash/recover: the affected nodes; partitions: one side of the cut
    nodes: frozenset


@dataclass(frozen=True)
class FaultScript:
    events: tuple[FaultEvent, ...] = ()

    def __post_init__(self):
        evs = tuple(sorted(self.events, key=lambda e: e.at_us))
        object.__setattr__(self, "events", evs)
        crashed: set = set()
        open_parts: list = []
        for e in evs:
            if e.kind not in FAULT_KINDS:
                raise ConfigError(f"unknown fault kind {e.kind!r}")
            if type(e.at_us) is not int or e.at_us < 0:
                raise ConfigError("fault at_us must be a non-negative integer")
            if not e.nodes:
                raise ConfigError(f"{e.kind} at {e.at_us} names no nodes")
            if e.kind == CRASH:
                crashed |= e.nodes
            elif e.kind == RECOVER:
                if not e.nodes <= crashed:
                    raise ConfigError(f"recover at {e.at_us} of nodes {sorted(e.nodes - crashed)} that are not crashed")
                crashed -= e.nodes
            elif e.kind == PARTITION_START:
                open_parts.append(e.nodes)
            else:
                if e.nodes not in open_parts:
                    raise ConfigError(f"partition_end at {e.at_us} matches no open partition")
                open_parts.remove(e.nodes)

    def check_nodes(self, node_count: int) -> None:
        for e in self.events:
            bad = [n for n in e.nodes if not (type(n) is int and 0 <= n < node_count)]
            if bad:
                raise ConfigError(f"{e.kind} at {e.at_us} names unknown nodes {bad}")
            if e.kind in (PARTITION_START, PARTITION_END) and len(e.nodes) >= node_count:
                raise ConfigError(f"partition at {e.at_us} must leave nodes on both sides")

    @classmethod
    def from_list(cls, items: Sequence[Mapping]) -> "FaultScript":
        events = []
        for it in items:
            try:
                events.append(FaultEvent(it["kind"], it["at_us"], frozenset(it["nodes"])))
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"bad fault event {it!r}: {exc}") from None
        return cls(tuple(events))


@dataclass(frozen=True)
class SkewSpec:
    """Per-client clock error: logged = true + offset + drift_ppm * true / 1e6."""

    offsets: Mapping[str, int] = field(default_factory=dict)
    drift_ppm: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for c, v in self.offsets.items():
            if type(v) is not int:
                raise ConfigError(f"skew offset for {c!r} must be an integer")
        for c, v in self.drift_ppm.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)) or v != v or abs(v) == float("inf"):
                raise ConfigError(f"drift for {c!r} must be a finite number")

    def logged(self, client: str, t: int) -> int:
        ppm = self.drift_ppm.get(client)
        if ppm:
            t = t + int(round(t * ppm / 1e6))
        return t + self.offsets.get(client, 0)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SkewSpec":
        extra = set(d) - {"offsets", "drift_ppm"}
        if extra:
            raise ConfigError(f"unknown skew fields: {sorted(extra)}")
        return cls(dict(d.get("offsets", {})), dict(d.get("drift_ppm", {})))


class VersionedValue(NamedTuple):
    value: str | None
    version: tuple[int, int]


_UNVERSIONED = (-1, -1)


def _rng(seed: int, stream: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{stream}".encode()).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))


def key_hash(key: str) -> int:
    return zlib.crc32(key.encode("utf-8"))


def replicas_for_key(key: str, node_count: int, replication_factor: int) -> list[int]:
    primary = key_hash(key) % node_count
    return [(primary + i) % node_count for i in range(replication_factor)]


def quorum_size(cl: str, replication_factor: int) -> int:
    if cl == ONE:
        return 1
    if cl == QUORUM:
        return replication_factor // 2 + 1
    if cl == ALL:
        return replication_factor
    raise ConfigError(f"unknown consistency level {cl!r}")


_push = heapq.heappush


class Node:
    def __init__(self, ident: int):
        self.ident = ident
        self.crashed = False
        self.store: dict[str, VersionedValue] = {}


class _Pending:
    __slots__ = ("client", "intent", "start", "done", "acks", "responses", "best")

    def __init__(self, client: str, intent: OpIntent, start: int):
        self.client = client
        self.intent = intent
        self.start = start
        self.done = False
        self.acks = 0
        self.responses: list = []
        self.best: VersionedValue | None = None


class Simulator:
    """One simulation run; :meth:`run` returns the client-side trace.

    After a run, ``nodes`` holds the final replica states.
    """

    def __init__(self, cfg: SimConfig, workload, faults: FaultScript | None = None,
                 skew: SkewSpec | None = None):
        self.cfg = cfg
        self.workload = workload
        self.faults = faults or FaultScript()
        self.faults.check_nodes(cfg.node_count)
        self.skew = skew or SkewSpec()
        self.nodes = [Node(i) for i in range(cfg.node_count)]
        self._replica_delay = cfg.latency_model.sampler(_rng(cfg.seed, "replica"))
        self._client_delay = cfg.client_latency.sampler(_rng(cfg.seed, "client"))
        self._wq = quorum_size(cfg.write_cl, cfg.replication_factor)
        self._rq = quorum_size(cfg.read_cl, cfg.replication_factor)
        self._partitions: list[frozenset] = []
        # no node crashed and no partition open
        self._healthy = True
        self._queue: list = []
        self._seq = 0
        self._counter = 0
        self._rr = 0
        self._replicas: dict[str, list[int]] = {}
        self.now = 0
        self.ops: list[tuple[int, int, Operation]] = []

    # -- event plumbing ---------------------------------------------------

    def _at(self, t: int, fn, *args) -> None:
        self._seq += 1
        _push(self._queue, (t, self._seq, fn, args))

    def _linked(self, a: int, b: int) -> bool:
        if self._healthy:
            return True
        na, nb = self.nodes[a], self.nodes[b]
        if na.crashed or nb.crashed:
            return False
        if a == b:
            return True
        for side in self._partitions:
            if (a in side) != (b in side):
                return False
        return True

    def _send(self, src: int, dst: int, fn, *args) -> None:
        if not self._linked(src, dst):
            return
        if src == dst:
            fn(*args)
        elif self._healthy and not self.faults.events:
            self._at(self.now + self._replica_delay(), fn, *args)
        else:
            self._at(self.now + self._replica_delay(), self._deliver, src, dst, fn, args)

    def _deliver(self, src: int, dst: int, fn, args) -> None:
        if self._linked(src, dst):
            fn(*args)

    def _replicas_of(self, key: str) -> list[int]:
        r = self._replicas.get(key)
        if r is None:
            r = self._replicas[key] = replicas_for_key(key, self.cfg.node_count, self.cfg.replication_factor)
        return r

    def _default(self, key: str) -> VersionedValue:
        return VersionedValue(initial_value(key) if self.workload.preload else None, _UNVERSIONED)

    # -- clients ------------------------------------------------------------

    def _issue(self, client: str) -> None:
        intent = self.workload.next_intent(client, self.now)
        if intent is None:
            return
        op = _Pending(client, intent, self.now)
        self._at(self.now + self.cfg.op_timeout_us, self._timeout, op)
        coord = self._pick_coordinator(intent.coordinator)
        if coord is None:
            return
        if intent.kind == PUT:
            self._coord_put(coord, op)
        else:
            self._coord_get(coord, op)

    def _pick_coordinator(self, pinned: int | None) -> int | None:
        n = self.cfg.node_count
        if pinned is not None:
            return pinned if 0 <= pinned < n and not self.nodes[pinned].crashed else None
        for i in range(n):
            cand = (self._rr + i) % n
            if not self.nodes[cand].crashed:
                self._rr = (cand + 1) % n
                return cand
        return None

    def _complete(self, op: _Pending, status: str, value: str | None) -> None:
        op.done = True
        intent = op.intent
        if intent.kind == PUT:
            value = intent.value
        elif status != OK or value is None:
            status, value = FAILED, EMPTY
        sk = self.skew
        rec = Operation(op.client, intent.key, intent.kind, value,
                        sk.logged(op.client, op.start), sk.logged(op.client, self.now), status)
        self.ops.append((op.start, len(self.ops), rec))
        nxt = self.workload.issue_after(op.client, self.now)
        if nxt is not None:
            self._at(nxt, self._issue, op.client)

    def _timeout(self, op: _Pending) -> None:
        if not op.done:
            self._complete(op, FAILED, None)

    def _reply(self, coord: int, op: _Pending, value: str | None) -> None:
        if self.nodes[coord].crashed:
            return
        self._at(self.now + self._client_delay(), self._client_receive, op, value)

    def _client_receive(self, op: _Pending, value: str | None) -> None:
        if not op.done:
            self._complete(op, OK, value)

    # -- write path -------------------------------------------------------

    def _coord_put(self, coord: int, op: _Pending) -> None:
        if self.nodes[coord].crashed:
            return
        self._counter += 1
        vv = VersionedValue(op.intent.value, (self.now, self._counter))
        for r in self._replicas_of(op.intent.key):
            self._send(coord, r, self._replica_put, coord, r, op, vv)

    def _apply(self, node: int, key: str, vv: VersionedValue) -> None:
        store = self.nodes[node].store
        cur = store.get(key)
        if cur is None or vv.version > cur.version:
            store[key] = vv

    def _replica_put(self, coord: int, r: int, op: _Pending, vv: VersionedValue) -> None:
        self._apply(r, op.intent.key, vv)
        self._send(r, coord, self._put_ack, coord, op)

    def _put_ack(self, coord: int, op: _Pending) -> None:
        op.acks += 1
        if op.acks == self._wq:
            self._reply(coord, op, None)

    # -- read path ----------------------------------------------------------

    def _coord_get(self, coord: int, op: _Pending) -> None:
        if self.nodes[coord].crashed:
            return
        for r in self._replicas_of(op.intent.key):
            self._send(coord, r, self._replica_get, coord, r, op)

    def _replica_get(self, coord: int, r: int, op: _Pending) -> None:
        key = op.intent.key
        vv = self.nodes[r].store.get(key) or self._default(key)
        self._send(r, coord, self._get_response, coord, r, op, vv)

    def _get_response(self, coord: int, r: int, op: _Pending, vv: VersionedValue) -> None:
        op.responses.append((r, vv))
        n = len(op.responses)
        if n < self._rq:
            return
        if n == self._rq:
            op.best = max((v for _, v in op.responses), key=lambda v: v.version)
            self._reply(coord, op, op.best.value)
            behind = op.responses
        else:
            behind = [(r, vv)]
        if self.cfg.read_repair and op.best.value is not None:
            for node, v in behind:
                if v.version < op.best.version:
                    self._send(coord, node, self._apply, node, op.intent.key, op.best)

    # -- faults -------------------------------------------------------------

    def _fault(self, ev: FaultEvent) -> None:
        if ev.kind == CRASH:
            for n in ev.nodes:
                self.nodes[n].crashed = True
        elif ev.kind == RECOVER:
            for n in ev.nodes:
                self.nodes[n].crashed = False
        elif ev.kind == PARTITION_START:
            self._partitions.append(ev.nodes)
        else:
            self._partitions.remove(ev.nodes)
        self._healthy = not self._partitions and not any(n.crashed for n in self.nodes)

    # -- driver -------------------------------------------------------------

    def run(self) -> Trace:
        for ev in self.faults.events:
            self._at(ev.at_us, self._fault, ev)
        for c in self.workload.clients:
            t = self.workload.first_issue(c)
            if t is not None:
                self._at(t, self._issue, c)
        q = self._queue
        pop = heapq.heappop
        while q:
            t, _, fn, args = pop(q)
            self.now = t
            fn(*args)
        self.ops.sort(key=lambda x: (x[0], x[1]))
        meta = {"seed": str(self.cfg.seed), "generator": f"deltabench {__version__}"}
        return Trace(tuple(rec for _, _, rec in self.ops), meta)

    def replica_state(self, key: str) -> list[VersionedValue]:
        return [self.nodes[r].store.get(key) or self._default(key) for r in self._replicas_of(key)]


def run_simulation(cfg: SimConfig, w: WorkloadSpec | object, f: FaultScript | None = None,
                   skew: SkewSpec | None = None) -> Trace:
    """Run one simulation; ``w`` is a WorkloadSpec or a workload driver object."""
    workload = YcsbWorkload(w, cfg.seed) if isinstance(w, WorkloadSpec) else w
    return Simulator(cfg, workload, f, skew).run()


# --------------------------------------------------------------------------
# experiment config documents


@dataclass(frozen=True)
class Experiment:
    sim: SimConfig
    workload: WorkloadSpec
    faults: FaultScript = field(default_factory=FaultScript)
    skew: SkewSpec = field(default_factory=SkewSpec)

    def with_seed(self, seed: int) -> "Experiment":
        d = {f.name: getattr(self.sim, f.name) for f in fields(SimConfig)}
        d["seed"] = seed
        return Experiment(SimConfig(**d), self.workload, self.faults, self.skew)

    def run(self) -> Trace:
        return run_simulation(self.sim, self.workload, self.faults, self.skew)


def load_config(data: bytes | str | Mapping) -> Experiment:
    """Build an Experiment from a JSON config document (sim/workload/faults/skew)."""
    if isinstance(data, Mapping):
        doc = data
    else:
        try:
            doc = json.loads(data)
        except ValueError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, Mapping):
        raise ConfigError("config must be a JSON object")
    extra = set(doc) - {"sim", "workload", "faults", "skew"}
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    try:
        sim = SimConfig.from_dict(doc.get("sim", {}))
        workload = WorkloadSpec.from_dict(doc.get("workload", {}))
        faults = FaultScript.from_list(doc.get("faults", []))
        faults.check_nodes(sim.node_count)
        skew = SkewSpec.from_dict(doc.get("skew", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return Experiment(sim, workload, faults, skew)
