from __future__ import annotations

from hypothesis import given
from hypothesis import strategies as st

from balboa.flow import Admission, CreditPool, QpBudget, admit_tx, consume_rx_credit, return_rx_credit, return_tx, try_admit


def test_budget_arithmetic():
    b = QpBudget(128)
    assert admit_tx(b, 8) is Admission.ADMITTED
    assert b.available == 120
    assert admit_tx(b, 120) is Admission.ADMITTED
    assert admit_tx(b, 1, "x") is Admission.QUEUED
    assert b.peak == 128


def test_queue_is_fifo_and_released_on_return():
    b = QpBudget(10)
    admit_tx(b, 10)
    assert admit_tx(b, 4, "a") is Admission.QUEUED
    assert admit_tx(b, 1, "b") is Admission.QUEUED  # fits later but must not overtake a
    assert return_tx(b, 3) == []
    assert return_tx(b, 1) == ["a"]
    assert b.in_flight == 10
    assert return_tx(b, 1) == ["b"]
    assert b.in_flight == 10 and not b.waiting


def test_over_return_clamps():
    b = QpBudget(16)
    admit_tx(b, 4)
    return_tx(b, 9)
    assert b.in_flight == 0 and b.over_returns == 1


def test_try_admit_does_not_queue():
    b = QpBudget(4)
    assert try_admit(b, 4)
    assert not try_admit(b, 1)
    assert not b.waiting


@given(st.lists(st.tuples(st.booleans(), st.integers(1, 40)), max_size=200))
def test_budget_never_exceeded(ops):
    b = QpBudget(64)
    for admit, n in ops:
        if admit:
            admit_tx(b, n)
        else:
            return_tx(b, n)
        assert 0 <= b.in_flight <= 64


@given(st.lists(st.tuples(st.booleans(), st.integers(1, 5)), max_size=300))
def test_credit_conservation(ops):
    pool = CreditPool(32)
    held = 0
    for take, n in ops:
        if take:
            for _ in range(n):
                if consume_rx_credit(pool):
                    held += 1
        else:
            k = min(n, held)
            return_rx_credit(pool, k)
            held -= k
        assert pool.available + held == pool.capacity
        assert 0 <= pool.available <= pool.capacity


def test_credit_exhaustion_and_over_return():
    pool = CreditPool(2)
    assert consume_rx_credit(pool) and consume_rx_credit(pool)
    assert not consume_rx_credit(pool)
    assert pool.exhausted_drops == 1
    return_rx_credit(pool, 5)
    assert pool.available == 2 and pool.over_returns == 1
