import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairseld.doa import DoaOutput
from pairseld.metrics import (
    SegmentCounts,
    UndefinedMetricError,
    angular_distance,
    assignment_cost,
    compute_doae,
    compute_er_f,
    compute_fr,
    evaluate,
    segment_counts,
)


def great_circle(a, b):
    # chord-length form, independent of the arccos implementation
    def xyz(az, el):
        az, el = math.radians(az), math.radians(el)
        return (math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el))

    pa, pb = xyz(*a), xyz(*b)
    chord = math.dist(pa, pb)
    return math.degrees(2 * math.asin(min(1.0, chord / 2)))


def brute_force_cost(est, ref):
    if not len(est) or not len(ref):
        return 0.0
    small, big = (est, ref) if len(est) <= len(ref) else (ref, est)
    best = math.inf
    for perm in itertools.permutations(range(len(big)), len(small)):
        best = min(best, sum(great_circle(small[i], big[j]) for i, j in enumerate(perm)))
    return best


def random_doas(rng, n):
    return np.column_stack([rng.choice(np.arange(-180, 180, 10), n), rng.choice(np.arange(-40, 50, 10), n)]).astype(float)


# --- segment counts -----------------------------------------------------------


def test_perfect_segment():
    c = segment_counts([[1, 1, 1, 0]], [[1, 1, 1, 0]])
    assert c.totals() == {"tp": 3, "fn": 0, "fp": 0, "n": 3, "s": 0, "d": 0, "i": 0}
    assert compute_er_f(c) == (0.0, 1.0)


def test_missed_reference():
    c = segment_counts([[0, 0]], [[1, 0]])
    assert (c.totals()["fn"], c.totals()["fp"]) == (1, 0)
    assert (c.s[0], c.d[0], c.i[0]) == (0, 1, 0)


def test_spurious_estimates():
    c = segment_counts([[1, 1, 0]], [[0, 0, 0]])
    assert (c.totals()["fp"], c.s[0], c.d[0], c.i[0]) == (2, 0, 0, 2)


def test_error_rate_one():
    # segment 0 holds one deletion, segment 1 one hit and one insertion
    est = [[0, 0], [1, 1]]
    ref = [[1, 0], [1, 0]]
    er, f = compute_er_f(segment_counts(est, ref))
    assert er == pytest.approx(1.0)
    assert f == pytest.approx(2 * 1 / (2 * 1 + 1 + 1))


def test_undefined_error_rate():
    with pytest.raises(UndefinedMetricError):
        compute_er_f(segment_counts([[1]], [[0]]))
    with pytest.raises(ValueError):
        segment_counts([[1, 0]], [[1]])


@settings(max_examples=100)
@given(st.integers(0, 2**31 - 1))
def test_er_f_invariant_under_fn_fp_swap(seed):
    rng = np.random.default_rng(seed)
    est = rng.integers(0, 2, (rng.integers(1, 10), 4))
    ref = rng.integers(0, 2, est.shape)
    ref[0, 0] = 1
    c = segment_counts(est, ref)
    swapped = SegmentCounts(c.tp, c.fp, c.fn, c.n)
    assert np.all(c.s + c.d + c.i == np.maximum(c.fn, c.fp))
    a, b = compute_er_f(c), compute_er_f(swapped)
    assert a[0] == pytest.approx(b[0], abs=1e-12)
    assert a[1] == pytest.approx(b[1], abs=1e-12)


# --- angular distance ---------------------------------------------------------


def test_angular_distance_examples():
    assert angular_distance((30.0, 20.0), (30.0, 20.0)) == 0.0
    assert angular_distance((0.0, 0.0), (180.0, 0.0)) == pytest.approx(180.0)
    assert angular_distance((0.0, 0.0), (90.0, 0.0)) == pytest.approx(90.0)
    assert angular_distance((0.0, 40.0), (0.0, -40.0)) == pytest.approx(80.0)


@settings(max_examples=300)
@given(st.integers(0, 2**31 - 1))
def test_angular_distance_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = random_doas(rng, 3)
    ab, ba = angular_distance(a, b), angular_distance(b, a)
    assert ab == pytest.approx(ba, abs=1e-9)
    assert ab == pytest.approx(great_circle(a, b), abs=1e-6)
    assert angular_distance(a, a) == 0.0
    assert ab <= angular_distance(a, c) + angular_distance(c, b) + 1e-9
    assert 0 <= ab <= 180


# --- DOAE / FR ---------------------------------------------------------------


def test_doae_identical():
    rng = np.random.default_rng(0)
    frames = [random_doas(rng, k) for k in (1, 2, 0, 3)]
    assert compute_doae(frames, frames) == 0.0


def test_doae_swapped_order():
    a, b = [10.0, 20.0], [-100.0, -30.0]
    assert compute_doae([np.array([a, b])], [np.array([b, a])]) == 0.0


def test_doae_matches_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(300):
        est = random_doas(rng, rng.integers(0, 5))
        ref = random_doas(rng, rng.integers(0, 5))
        assert assignment_cost(est, ref) == pytest.approx(brute_force_cost(est, ref), abs=1e-6)


def test_doae_unequal_sizes_use_estimate_count():
    est = [np.array([[0.0, 0.0], [90.0, 0.0]])]
    ref = [np.array([[0.0, 10.0]])]
    assert compute_doae(est, ref) == pytest.approx(10.0 / 2)


def test_doae_frame_order_irrelevant():
    rng = np.random.default_rng(3)
    est = [random_doas(rng, 2) for _ in range(6)]
    ref = [random_doas(rng, 2) for _ in range(6)]
    perm = rng.permutation(6)
    assert compute_doae(est, ref) == pytest.approx(compute_doae([est[i] for i in perm], [ref[i] for i in perm]))


def test_doae_undefined_without_estimates():
    with pytest.raises(UndefinedMetricError):
        compute_doae([np.zeros((0, 2))], [np.array([[0.0, 0.0]])])


def test_frame_recall():
    est = [np.zeros((1, 2)), np.zeros((0, 2)), np.zeros((2, 2)), np.zeros((1, 2))]
    ref = [np.zeros((1, 2)), np.zeros((0, 2)), np.zeros((2, 2)), np.zeros((2, 2))]
    assert compute_fr(est, ref) == 0.75
    assert compute_fr(ref, ref) == 1.0
    with pytest.raises(UndefinedMetricError):
        compute_fr([], [])


def test_evaluate_reports_undefined_doae():
    ref = DoaOutput(3, [0, 1], [0, 0], [0, 0], [0, 0])
    est = DoaOutput(3)
    report = evaluate([[0]], [[1]], est, ref)
    assert report.f == 0.0 and report.er == 1.0
    assert report.doae is None and "doae" in report.diagnostics
    assert report.fr == pytest.approx(1 / 3)
    assert "undefined" in report.table()
