import pytest

from deltabench.analysis import NO_VALID_ORDER, SIZE_LIMIT, AnalysisError
from deltabench.oracle import check_linearizable, delta_candidates, oracle_delta, oracle_k, stretch

from helpers import figure1, get, put


def test_read_after_write_is_linearizable():
    assert check_linearizable([put("a", 0, 10), get("a", 20, 30)])


def test_stale_read_is_not_linearizable():
    assert not check_linearizable([put("a", 0, 1), put("b", 2, 3), get("a", 4, 5)])


def test_concurrent_writes_may_serialize_either_way():
    # b's point can fall before a's, so a read of a after both is fine
    assert check_linearizable([put("a", 0, 10), put("b", 5, 15), get("a", 12, 20)])


def test_touching_endpoints_do_not_force_order():
    # read starts exactly when the newer write ends: either order is allowed
    assert check_linearizable([put("a", 0, 1), put("b", 2, 3), get("a", 3, 5)])


def test_empty_and_initial_value_histories():
    assert check_linearizable([])
    assert check_linearizable([get("init:k", 0, 1)])
    assert not check_linearizable([put("a", 0, 1), get("init:k", 2, 3)])


def test_failed_gets_are_ignored():
    assert check_linearizable([put("a", 0, 1), put("b", 2, 3), get("a", 4, 5, status="failed")])


def test_oracle_delta_examples():
    assert oracle_delta(figure1()) == 10
    assert oracle_delta([put("a", 0, 10), get("a", 20, 30)]) == 0
    # stretched start 3 meets b's finish 3, which closed intervals allow
    assert oracle_delta([put("a", 0, 1), put("b", 2, 3), get("a", 4, 5)]) == 1


def test_oracle_delta_is_minimal():
    h = figure1()
    assert check_linearizable(stretch(h, 10))
    assert not check_linearizable(stretch(h, 9))


def test_candidates_include_gaps_to_reads():
    # the answer here is a read-to-read gap, not a read-to-write gap
    h = [put("i", 0, 1), get("i", 30, 40), put("j", 2, 100), get("j", 5, 10)]
    assert oracle_delta(h) == 20
    assert 20 in delta_candidates(h)
    write_gaps = {r.start_us - w.finish_us for r in h if r.kind == "get" for w in h if w.kind == "put"}
    assert 20 not in write_gaps


def test_oracle_k_examples():
    assert oracle_k([put("a", 0, 10), get("a", 20, 30)]) == 1
    assert oracle_k([put("a", 0, 1), put("b", 2, 3), get("a", 4, 5)]) == 2
    assert oracle_k([put("a", 0, 1), put("b", 2, 3), put("c", 4, 5), get("a", 6, 7)]) == 3
    assert oracle_k(figure1()) == 2


def test_phantom_read_has_no_valid_order():
    with pytest.raises(AnalysisError) as exc:
        oracle_k([put("a", 0, 1), get("zz", 2, 3)])
    assert exc.value.code == NO_VALID_ORDER
    with pytest.raises(AnalysisError) as exc:
        oracle_delta([put("a", 0, 1), get("zz", 2, 3)])
    assert exc.value.code == NO_VALID_ORDER


def test_size_limit():
    h = [put(f"v{i}", 10 * i, 10 * i + 5) for i in range(13)]
    with pytest.raises(AnalysisError) as exc:
        check_linearizable(h)
    assert exc.value.code == SIZE_LIMIT
    with pytest.raises(AnalysisError):
        oracle_k(h[:11])
    assert oracle_k(h[:10]) == 1
    # the bound is configurable
    assert check_linearizable(h, max_ops=13)


def test_multi_key_history_rejected():
    with pytest.raises(ValueError):
        check_linearizable([put("a", 0, 1, key="x"), put("b", 0, 1, key="y")])
