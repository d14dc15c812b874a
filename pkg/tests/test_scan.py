import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctmap import ParameterError, ScanPlan, ScanStats, scan, sequential_scan
from ctmap.scan import Batched


def concat(a, b):
    assert a is not None and b is not None
    return a + b


@dataclass(frozen=True)
class Mats(Batched):
    M: np.ndarray


def matmul(a, b):
    return Mats(a.M @ b.M)


def random_mats(T, seed):
    rng = np.random.default_rng(seed)
    return Mats(np.eye(3) + 0.3 * rng.standard_normal((T, 3, 3)))


@given(st.lists(st.text(min_size=1, max_size=2), min_size=1, max_size=70),
       st.sampled_from(["forward", "reversed"]))
def test_list_scan_matches_sequential(items, direction):
    plan = ScanPlan(len(items), direction, cutoff=1)
    assert scan(items, concat, plan) == sequential_scan(items, concat, direction)


def test_scan_orders_by_hand():
    xs = ["a", "b", "c", "d", "e"]
    assert scan(xs, concat, ScanPlan(5, cutoff=1)) == ["a", "ab", "abc", "abcd", "abcde"]
    assert scan(xs, concat, ScanPlan(5, "reversed", cutoff=1)) == \
        ["abcde", "bcde", "cde", "de", "e"]


@given(st.integers(1, 80), st.integers(0, 2**16), st.sampled_from(["forward", "reversed"]))
def test_batched_scan_matches_sequential(T, seed, direction):
    els = random_mats(T, seed)
    par = scan(els, matmul, ScanPlan(T, direction, cutoff=1))
    seq = sequential_scan(els, matmul, direction)
    scale = np.max(np.abs(seq.M)) + 1.0
    assert np.allclose(par.M, seq.M, rtol=0, atol=1e-10 * scale)


@given(st.integers(1, 300))
def test_stats_bounds(T):
    stats = ScanStats()
    scan(list("x" * T), concat, ScanPlan(T, cutoff=1), stats)
    assert stats.combine_calls <= 2 * T
    assert stats.depth <= math.ceil(math.log2(T + 1)) + 1


def test_sequential_execution_is_a_chain():
    stats = ScanStats()
    scan(list("abcdef"), concat, ScanPlan(6, execution="sequential"), stats)
    assert stats.combine_calls == 5 and stats.depth == 5


def test_cutoff_selects_sequential_path():
    stats = ScanStats()
    scan(list("abc"), concat, ScanPlan(3, cutoff=8), stats)
    assert stats.depth == 2


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_workers_do_not_change_results(workers):
    els = random_mats(101, 1)
    ref = scan(els, matmul, ScanPlan(101, cutoff=1, workers=1))
    out = scan(els, matmul, ScanPlan(101, cutoff=1, workers=workers))
    assert np.array_equal(ref.M, out.M)
    items = [str(i) + "," for i in range(50)]
    assert scan(items, concat, ScanPlan(50, cutoff=1, workers=workers)) == \
        sequential_scan(items, concat)


def test_single_element_and_empty():
    assert scan(["z"], concat) == ["z"]
    with pytest.raises(ParameterError):
        scan([], concat)
    with pytest.raises(ParameterError):
        ScanPlan(3, direction="sideways")
