"""Exhaustive-search oracles for single-key histories.

These decide atomicity, smallest Delta and smallest k straight from the
definitions by enumerating serialization orders.  They share nothing with
the cluster scoring in :mod:`deltabench.analysis` and exist to check it.
"""

from __future__ import annotations

from typing import Sequence

from .analysis import NO_VALID_ORDER, SIZE_LIMIT, AnalysisError
from .trace import GET, OK, PUT, Operation, initial_value

LINEARIZABILITY_BOUND = 12
K_BOUND = 10


def _prepare(ops: Sequence[Operation], bound: int) -> tuple[list[Operation], str | None]:
    ops = [op for op in ops if op.kind == PUT or op.status == OK]
    keys = {op.key for op in ops}
    if len(keys) > 1:
        raise ValueError(f"history spans several keys: {sorted(keys)}")
    key = next(iter(keys), None)
    if len(ops) > bound:
        raise AnalysisError(SIZE_LIMIT, f"{len(ops)} operations exceed the search bound of {bound}", key)
    return ops, key


def _must_precede(ops: Sequence[Operation]) -> list[int]:
    """Bitmask per op of the ops that finished strictly before it started."""
    pred = [0] * len(ops)
    for i, a in enumerate(ops):
        for j, b in enumerate(ops):
            if a.finish_us < b.start_us:
                pred[j] |= 1 << i
    return pred


def _exists_order(ops: Sequence[Operation], init: str, k: int) -> bool:
    """Is there a real-time-respecting order where each get sees one of the last k puts?"""
    n = len(ops)
    pred = _must_precede(ops)
    full = (1 << n) - 1
    dead: set = set()

    def search(mask: int, window: tuple) -> bool:
        if mask == full:
            return True
        if (mask, window) in dead:
            return False
        for i in range(n):
            bit = 1 << i
            if mask & bit or pred[i] & ~mask:
                continue
            op = ops[i]
            if op.kind == PUT:
                if search(mask | bit, (window + (op.value,))[-k:]):
                    return True
            elif op.value in window:
                if search(mask | bit, window):
                    return True
        dead.add((mask, window))
        return False

    return search(0, (init,))


def check_linearizable(ops: Sequence[Operation], max_ops: int = LINEARIZABILITY_BOUND) -> bool:
    ops, key = _prepare(ops, max_ops)
    if not ops:
        return True
    return _exists_order(ops, initial_value(key), 1)


def stretch(ops: Sequence[Operation], delta: int) -> list[Operation]:
    """Move every get's start ``delta`` microseconds earlier."""
    return [op._replace(start_us=op.start_us - delta) if op.kind == GET else op for op in ops]


def delta_candidates(ops: Sequence[Operation]) -> list[int]:
    # the precedence relation only changes where a stretched start crosses a finish
    gets = [op for op in ops if op.kind == GET]
    gaps = {r.start_us - o.finish_us for r in gets for o in ops}
    return sorted({0} | {g for g in gaps if g > 0})


def oracle_delta(ops: Sequence[Operation], max_ops: int = LINEARIZABILITY_BOUND) -> int:
    """Smallest stretch that makes the history atomic."""
    ops, key = _prepare(ops, max_ops)
    if not ops:
        return 0
    init = initial_value(key)
    for d in delta_candidates(ops):
        if _exists_order(stretch(ops, d), init, 1):
            return d
    raise AnalysisError(NO_VALID_ORDER, "no stretch makes the history atomic", key)


def oracle_k(ops: Sequence[Operation], max_ops: int = K_BOUND) -> int:
    """Smallest k for which the history is k-atomic."""
    ops, key = _prepare(ops, max_ops)
    if not ops:
        return 1
    init = initial_value(key)
    n_puts = sum(1 for op in ops if op.kind == PUT)
    for k in range(1, n_puts + 2):
        if _exists_order(ops, init, k):
            return k
    raise AnalysisError(NO_VALID_ORDER, "no order explains every read", key)
