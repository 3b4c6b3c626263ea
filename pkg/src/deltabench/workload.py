"""Closed-loop YCSB-style workload generation with a hot-spot key distribution."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, fields
from typing import Mapping, NamedTuple, Sequence

from .trace import GET, PUT


class ConfigError(ValueError):
    """Invalid simulation, workload, fault or skew configuration."""


class OpIntent(NamedTuple):
    kind: str
    key: str
    value: str | None = None
    # pin the coordinating node (constructed schedules only)
    coordinator: int | None = None


@dataclass
class ClientState:
    client: str
    seq: int = 0


@dataclass(frozen=True)
class WorkloadSpec:
    key_count: int = 1000
    read_fraction: float = 0.8
    hot_key_fraction: float = 0.2
    hot_op_fraction: float = 0.8
    client_count: int = 32
    duration_us: int = 60_000_000
    think_time_us: int = 0
    preload: bool = True
    # stop after this many operations in total (None: run for duration_us)
    op_limit: int | None = None

    def __post_init__(self):
        for name in ("read_fraction", "hot_key_fraction", "hot_op_fraction"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise ConfigError(f"workload.{name} must be a fraction in [0, 1], got {v!r}")
        for name, lo in (("key_count", 1), ("client_count", 1), ("duration_us", 0), ("think_time_us", 0)):
            v = getattr(self, name)
            if type(v) is not int or v < lo:
                raise ConfigError(f"workload.{name} must be an integer >= {lo}, got {v!r}")
        if self.op_limit is not None and (type(self.op_limit) is not int or self.op_limit < 0):
            raise ConfigError(f"workload.op_limit must be a non-negative integer, got {self.op_limit!r}")
        if self.hot_count == 0 and self.hot_op_fraction > 0:
            raise ConfigError("hot key set is empty but hot_op_fraction > 0")

    @property
    def hot_count(self) -> int:
        # round() first so 0.2 * 1000 does not ceil to 201
        return min(self.key_count, math.ceil(round(self.hot_key_fraction * self.key_count, 9)))

    def key_name(self, index: int) -> str:
        width = len(str(self.key_count - 1))
        return f"k{index:0{width}d}"

    def keys(self) -> list[str]:
        """All keys in canonical order; the hot set is a prefix of this list."""
        return [self.key_name(i) for i in range(self.key_count)]

    def client_names(self) -> list[str]:
        return [f"c{i + 1}" for i in range(self.client_count)]

    @classmethod
    def from_dict(cls, d: Mapping) -> "WorkloadSpec":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown workload fields: {sorted(extra)}")
        return cls(**d)


def sample_key(spec: WorkloadSpec, rng: random.Random) -> str:
    hot = spec.hot_count
    if hot == 0 and spec.hot_op_fraction > 0:
        raise ConfigError("hot key set is empty but hot_op_fraction > 0")
    cold = spec.key_count - hot
    if hot and (cold == 0 or rng.random() < spec.hot_op_fraction):
        return spec.key_name(rng.randrange(hot))
    return spec.key_name(hot + rng.randrange(cold))


def next_op(spec: WorkloadSpec, state: ClientState, rng: random.Random) -> OpIntent:
    """Draw the client's next operation; puts carry a fresh ``client:seq`` value."""
    if rng.random() < spec.read_fraction:
        return OpIntent(GET, sample_key(spec, rng))
    key = sample_key(spec, rng)
    state.seq += 1
    return OpIntent(PUT, key, f"{state.client}:{state.seq}")


class YcsbWorkload:
    """Drives ``client_count`` closed-loop clients until ``duration_us``."""

    def __init__(self, spec: WorkloadSpec, seed: int = 0):
        self.spec = spec
        self.rng = random.Random(f"{seed}:workload")
        self.states = {c: ClientState(c) for c in spec.client_names()}
        self.issued = 0

    @property
    def clients(self) -> list[str]:
        return list(self.states)

    @property
    def preload(self) -> bool:
        return self.spec.preload

    def first_issue(self, client: str) -> int | None:
        return 0 if self.spec.duration_us > 0 else None

    def next_intent(self, client: str, now: int) -> OpIntent | None:
        if now >= self.spec.duration_us:
            return None
        if self.spec.op_limit is not None and self.issued >= self.spec.op_limit:
            return None
        self.issued += 1
        return next_op(self.spec, self.states[client], self.rng)

    def issue_after(self, client: str, now: int) -> int | None:
        at = now + self.spec.think_time_us
        return at if at < self.spec.duration_us else None


class ScriptedOp(NamedTuple):
    intent: OpIntent
    # earliest issue time; None means as soon as the previous op completes
    at_us: int | None = None


class ScriptedWorkload:
    """Fixed per-client operation lists, for constructed schedules.

    Each client still runs closed-loop: an op is issued at
    ``max(at_us, completion of the previous op)``.
    """

    def __init__(self, script: Mapping[str, Sequence[ScriptedOp]], preload: bool = True):
        self.script = {c: list(ops) for c, ops in script.items()}
        self._pos = {c: 0 for c in self.script}
        self.preload = preload

    @property
    def clients(self) -> list[str]:
        return list(self.script)

    def first_issue(self, client: str) -> int | None:
        return self.issue_after(client, 0)

    def next_intent(self, client: str, now: int) -> OpIntent | None:
        i = self._pos[client]
        ops = self.script[client]
        if i >= len(ops):
            return None
        self._pos[client] = i + 1
        return ops[i].intent

    def issue_after(self, client: str, now: int) -> int | None:
        i = self._pos[client]
        ops = self.script[client]
        if i >= len(ops):
            return None
        at = ops[i].at_us
        return now if at is None else max(now, at)
