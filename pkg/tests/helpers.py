"""Shared builders and random-history strategies for the test suite."""

import random

from hypothesis import strategies as st

from deltabench.trace import FAILED, GET, OK, PUT, Operation, Trace, initial_value


def put(value, start, finish, key="k", client="w", status=OK):
    return Operation(client, key, PUT, value, start, finish, status)


def get(value, start, finish, key="k", client="r", status=OK):
    return Operation(client, key, GET, value, start, finish, status)


def figure1():
    """Three sequential writes, each of the first two read once after being overwritten."""
    return [
        put("v1", 0, 10, client="c1"),
        put("v2", 20, 30, client="c1"),
        put("v3", 40, 50, client="c1"),
        get("v1", 38, 46, client="c2"),
        get("v2", 60, 70, client="c3"),
    ]


def random_history(rng: random.Random, n_max=8, v_max=3, horizon=30, span=12, key="k",
                   failures=False, causal=False):
    """A single-key history with unique put values; reads return an existing value or the initial one.

    With ``causal`` a read never returns a value whose put starts after the read finishes.
    """
    n = rng.randint(1, n_max)
    nputs = rng.randint(0, min(v_max, n))
    ops = []
    writes = []
    for i in range(nputs):
        s = rng.randint(0, horizon)
        status = FAILED if failures and rng.random() < 0.15 else OK
        w = put(f"v{i}", s, s + rng.randint(0, span), key=key, client=f"w{i}", status=status)
        writes.append(w)
        ops.append(w)
    for i in range(n - nputs):
        s = rng.randint(0, horizon)
        f = s + rng.randint(0, span)
        choices = [initial_value(key)] + [w.value for w in writes if not causal or w.start_us <= f]
        status = FAILED if failures and rng.random() < 0.15 else OK
        ops.append(get(rng.choice(choices), s, f, key=key, client=f"r{i}", status=status))
    rng.shuffle(ops)
    return ops


@st.composite
def histories(draw, n_max=8, v_max=3, horizon=30, key="k", failures=False):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_history(random.Random(seed), n_max, v_max, horizon, key=key, failures=failures)


@st.composite
def traces(draw, max_keys=4, n_max=8):
    ops = []
    for i in range(draw(st.integers(0, max_keys))):
        ops.extend(draw(histories(n_max=n_max, key=f"key{i}", failures=True)))
    draw(st.randoms(use_true_random=False)).shuffle(ops)
    return Trace(tuple(ops))


# arbitrary strings for round-trip tests: JSON escapes, non-ASCII, U+2028
text = st.text(alphabet=st.characters(codec="utf-8"), min_size=1, max_size=12)


@st.composite
def operations(draw):
    kind = draw(st.sampled_from([GET, PUT]))
    status = draw(st.sampled_from([OK, FAILED]))
    value = draw(text)
    if kind == GET and status == FAILED and draw(st.booleans()):
        value = ""
    start = draw(st.integers(-(2**40), 2**40))
    return Operation(draw(text), draw(text), kind, value, start, start + draw(st.integers(0, 10**6)), status)
