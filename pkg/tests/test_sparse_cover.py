import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oscilab.errors import DomainError
from oscilab.exponents import loglog_fit
from oscilab.sparse_cover import (
    BASIC, STRENGTHENED, CubeSet, SparseCollection, collections_from_json, collections_to_json,
    cover, cover_report, default_exponent, scale_radii, verify_sparse,
)


def brute_min_distance(centers):
    best = math.inf
    for a, b in itertools.combinations(np.asarray(centers, float), 2):
        best = min(best, math.dist(a, b))
    return best


def corners_inside(collections, cubes):
    """Every corner of every cube lies in one common ball (checked corner by corner)."""
    offsets = np.array(list(itertools.product((0, 1), repeat=cubes.dim)))
    for c in cubes.corners:
        pts = c + offsets
        if not any(np.all(np.linalg.norm(pts - ctr, axis=1) <= coll.radius)
                   for coll in collections for ctr in coll.centers):
            return False
    return True


cube_sets = st.lists(st.tuples(st.integers(-40, 40), st.integers(-40, 40), st.integers(-3, 3)),
                     min_size=1, max_size=40, unique=True)


# --- cube sets ------------------------------------------------------------------


def test_cube_set_sorted_and_distinct():
    e = CubeSet([(2, 0, 0), (0, 1, 0), (0, 0, 5)])
    assert e.corners.tolist() == [[0, 0, 5], [0, 1, 0], [2, 0, 0]]
    with pytest.raises(DomainError):
        CubeSet([(0, 0, 0), (0, 0, 0)])
    assert CubeSet.from_json(e.to_json()).corners.tolist() == e.corners.tolist()


def test_default_exponent():
    # (n+1)/(n(n-1)) = 2/3 and 2n/(n-1) = 3 at n = 3
    assert default_exponent(3) == 4.0
    assert default_exponent(2) == 5.0


# --- verifier -------------------------------------------------------------------


def test_single_ball_is_sparse():
    check = verify_sparse(SparseCollection(np.zeros((1, 3)), 5.0, 4.0))
    assert check.ok and check.worst_pair is None


def test_threshold_is_strict():
    # N = 2, R = 1, C = 4: threshold 16
    coll = SparseCollection(np.array([[0.0, 0, 0], [16.0, 0, 0]]), 1.0, 4.0)
    check = verify_sparse(coll, 3)
    assert check.threshold == 16.0 and check.min_distance == 16.0
    assert not check.ok
    nudged = SparseCollection(np.array([[0.0, 0, 0], [16.000001, 0, 0]]), 1.0, 4.0)
    assert verify_sparse(nudged).ok


def test_strengthened_threshold_value():
    # regular tetrahedron of side 21
    s = 21 / math.sqrt(2)
    centers = s * np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], float)
    coll = SparseCollection(centers, 2.0, 4.0)
    check = verify_sparse(coll, 3, STRENGTHENED)
    assert check.threshold == pytest.approx(4 ** (2 / 3) * 8)
    assert check.threshold == pytest.approx(20.16, abs=0.01)
    assert check.min_distance == pytest.approx(21)
    assert check.ok


def test_verifier_rejects_bad_input():
    coll = SparseCollection(np.zeros((2, 3)), 1.0, 4.0)
    with pytest.raises(DomainError):
        verify_sparse(coll, 2)
    with pytest.raises(DomainError):
        verify_sparse(coll, mode="loose")


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 700), st.integers(0, 10_000))
def test_verifier_min_distance_matches_brute_force(count, seed):
    centers = np.random.default_rng(seed).uniform(-100, 100, (min(count, 60), 2))
    check = verify_sparse(SparseCollection(centers, 1.0, 1.0))
    assert check.min_distance == pytest.approx(brute_min_distance(centers), rel=1e-12)
    i, j = check.worst_pair
    assert math.dist(centers[i], centers[j]) == pytest.approx(check.min_distance, rel=1e-12)


def test_verifier_chunked_and_threaded():
    centers = np.random.default_rng(3).uniform(0, 1e4, (1300, 3))
    one = verify_sparse(SparseCollection(centers, 1.0, 1.0), threads=1)
    many = verify_sparse(SparseCollection(centers, 1.0, 1.0), threads=4)
    assert one == many
    assert one.min_distance == pytest.approx(
        min(np.sort(np.linalg.norm(centers[i] - centers, axis=1))[1] for i in range(len(centers))))


# --- cover --------------------------------------------------------------------------


def test_single_cube():
    out = cover(CubeSet([(3, -1, 2)]), 0.5)
    assert len(out) == 1 and out[0].N == 1
    assert corners_inside(out, CubeSet([(3, -1, 2)]))


def test_far_apart_cubes_form_one_collection():
    n_cubes = 5
    gap = n_cubes ** 4 + 7
    e = CubeSet([(k * gap, 0, 0) for k in range(n_cubes)])
    out = cover(e, 1 / 3)
    assert len(out) == 1
    assert out[0].N == n_cubes and out[0].radius == 1.0


def test_cubes_in_a_row():
    e = CubeSet.row(64)
    out = cover(e, 1 / 3)
    rep = cover_report(e, 1 / 3, out)
    assert rep.count <= 12 * max(rep.A, 1)
    assert rep.covered and rep.basic_ok and rep.strengthened_ok
    assert corners_inside(out, e)


def test_preconditions():
    with pytest.raises(DomainError):
        cover(CubeSet([]), 0.5)
    with pytest.raises(DomainError):
        cover(CubeSet([(0, 0)]), 1.0)


def test_scale_radii_separation():
    r, R = scale_radii(64, 3, 1 / 3, 4.0)
    assert len(r) == 4 and len(R) == 3
    for k in range(3):
        assert r[k + 1] - r[k] == pytest.approx((64 * R[k]) ** 4)


@settings(max_examples=60, deadline=None)
@given(cube_sets, st.sampled_from([0.25, 1 / 3, 0.5, 0.75]))
def test_cover_sound_and_sparse(corners, delta):
    e = CubeSet(corners)
    out = cover(e, delta)
    assert corners_inside(out, e)
    for coll in out:
        for mode in (BASIC, STRENGTHENED):
            check = verify_sparse(coll, 3, mode)
            assert check.ok
            if coll.N > 1:
                assert check.min_distance == pytest.approx(brute_min_distance(coll.centers))
    # members partition the cube set
    seen = sorted(i for coll in out for m in coll.members for i in m)
    assert seen == list(range(len(e)))
    levels = math.ceil(1 / delta - 1e-12)
    assert len(out) <= levels * len(e) ** (1 / levels) + 1e-9


@settings(max_examples=30, deadline=None)
@given(cube_sets)
def test_cover_is_deterministic_and_order_free(corners):
    a = cover(CubeSet(corners), 1 / 3)
    b = cover(CubeSet(list(reversed(corners))), 1 / 3)
    assert collections_to_json(CubeSet(corners), 1 / 3, a) == collections_to_json(CubeSet(corners), 1 / 3, b)


@pytest.mark.parametrize("gap, expected", [(200, 1), (10**6, 2)])
def test_two_clusters(gap, expected):
    # near clusters merge into one ball; distant ones get a ball each, in
    # separate collections because the gap is below the nominal separation
    left = [(i, j, 0) for i in range(2) for j in range(2)]
    right = [(gap + i, j, 0) for i in range(2) for j in range(2)]
    e = CubeSet(left + right)
    out = cover(e, 1 / 3)
    rep = cover_report(e, 1 / 3, out)
    assert rep.count == expected
    assert rep.covered and rep.basic_ok and rep.strengthened_ok
    if gap > 1000:
        # farthest corner of a 2x2x1 block from its first cube's centre
        assert rep.max_radius == pytest.approx(math.sqrt(1.5**2 * 2 + 0.25))


def test_nested_rows_count_monotone_and_sparse():
    prev = 0
    for size in (1, 2, 8, 64, 512):
        e = CubeSet.row(size)
        out = cover(e, 1 / 3)
        rep = cover_report(e, 1 / 3, out)
        assert rep.basic_ok and rep.covered
        assert len(out) >= prev
        prev = len(out)


@settings(max_examples=25, deadline=None)
@given(cube_sets, st.lists(st.tuples(st.integers(-40, 40), st.integers(-40, 40), st.integers(-3, 3)),
                           max_size=10, unique=True))
def test_nested_superset_keeps_sparsity(corners, extra):
    small = CubeSet(corners)
    big = small.union(CubeSet(extra)) if extra else small
    for e in (small, big):
        rep = cover_report(e, 1 / 3, cover(e, 1 / 3))
        assert rep.covered and rep.basic_ok and rep.strengthened_ok


def test_count_growth_slope():
    delta = 1 / 3
    counts = [(m, len(cover(CubeSet.row(m), delta))) for m in (8, 64, 512)]
    assert loglog_fit(counts).slope <= delta + 0.1


def test_json_round_trip():
    e = CubeSet([(0, 0, 0), (1, 0, 0), (300, 0, 0)])
    out = cover(e, 0.5)
    e2, delta, back = collections_from_json(collections_to_json(e, 0.5, out))
    assert delta == 0.5 and e2.corners.tolist() == e.corners.tolist()
    assert [c.to_dict() for c in back] == [c.to_dict() for c in out]
