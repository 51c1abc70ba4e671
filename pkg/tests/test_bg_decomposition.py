import math
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oscilab.bg_decomposition import (
    BROAD, COPLANAR, NARROW, CapCoefficients, broad_pointwise_certificate, certificate_factor,
    classify_nd, classify_point_3d, classify_point_nd, coplanar_quadruple_filter, decompose_ball,
    find_noncoplanar_triple, hyperbolic_degenerate_direction_test, quadruple_bound, quadruple_sweep,
)
from oscilab.errors import CertificateError, DomainError
from oscilab.oscillatory_core import Lattice, PhaseFunction, SampledField, required_h
from oscilab.surface_geometry import CapPartition, Surface, gauss_normal, transversality_volume


def sparse(centers, values, K, K1, count=None):
    return CapCoefficients(np.asarray(values, float), np.asarray(centers, float), K, K1, count)


def brute_noncoplanar(P, margin):
    """Direct transcription of the ordered condition over all ordered triples."""
    for a in range(len(P)):
        for b in range(len(P)):
            for g in range(len(P)):
                if len({a, b, g}) < 3:
                    continue
                ab = np.linalg.norm(P[a] - P[b])
                ag = np.linalg.norm(P[a] - P[g])
                d = P[b] - P[a]
                r = P[g] - P[a]
                h = abs(r[0] * d[1] - r[1] * d[0]) / np.linalg.norm(d)
                if ab >= ag >= h > margin:
                    return True
    return False


# -- 3D classification -------------------------------------------------------------


def test_concentrated_mass_is_narrow():
    part = CapPartition(10, 2)
    c = np.zeros(len(part))
    c[37] = 1.0
    c[38] = 1e-5  # adjacent, within 1/K1
    pc = classify_point_3d(CapCoefficients.from_partition(part, c, K1=4))
    assert pc.tag == NARROW
    assert pc.indices == (37,)


def test_three_spread_caps_are_broad():
    coeffs = sparse([(0, 0), (0.5, 0), (0, 0.5)], [1, 1, 1], K=100, K1=10)
    pc = classify_point_3d(coeffs, margin_const=10)
    assert pc.tag == BROAD
    assert sorted(pc.indices) == [0, 1, 2]
    a, b, g = pc.indices
    P = coeffs.centers
    assert np.linalg.norm(P[a] - P[b]) >= np.linalg.norm(P[a] - P[g])


def test_literal_margin_needs_large_K():
    pts = [(0, 0), (0.5, 0), (0, 0.5)]
    # 10^3 / 100 exceeds the diameter of the domain: the broad case is vacuous
    assert classify_point_3d(sparse(pts, [1, 1, 1], K=100, K1=10)).tag != BROAD
    assert classify_point_3d(sparse(pts, [1, 1, 1], K=10**4, K1=10)).tag == BROAD


def test_caps_on_a_line_are_coplanar():
    pts = [(t, 0.0) for t in np.linspace(-0.45, 0.45, 10)]
    pc = classify_point_3d(sparse(pts, np.ones(10), K=100, K1=10), margin_const=10)
    assert pc.tag == COPLANAR
    point, direction = pc.line
    assert abs(point[1]) < 1e-15 and abs(direction[1]) < 1e-15
    assert pc.strip_condition


def test_case_order_prefers_broad():
    pts = [(0, 0), (0.4, 0), (0, 0.4), (0.45, 0.45)]
    pc = classify_point_3d(sparse(pts, [1, 0.5, 0.5, 0.5], K=100, K1=10), margin_const=10)
    assert pc.tag == BROAD


@pytest.mark.parametrize("leg", [0.45069390943299864, 0.1, 1 / 3, 0.7])
def test_right_isosceles_triangle_is_found(leg):
    # height onto a leg equals the other leg, so that ordering is a rounding tie;
    # the hypotenuse ordering must be used instead
    P = np.array([(0.0, 0.0), (leg, 0.0), (0.0, leg)]) + 0.123
    margin = leg / 2
    assert brute_noncoplanar(P, margin)
    tri = find_noncoplanar_triple(P, margin)
    assert tri is not None
    a, b, g = tri
    d, r = P[b] - P[a], P[g] - P[a]
    h = abs(r[0] * d[1] - r[1] * d[0]) / np.linalg.norm(d)
    assert np.linalg.norm(d) >= np.linalg.norm(r) >= h > margin


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 9), st.floats(0.01, 0.6))
def test_triangle_search_matches_brute_force(seed, m, margin):
    P = np.random.default_rng(seed).uniform(-0.5, 0.5, size=(m, 2))
    found = find_noncoplanar_triple(P, margin)
    assert (found is not None) == brute_noncoplanar(P, margin)


def random_coeffs(rng, K, K1):
    part = CapPartition(K, 2)
    c = np.zeros(len(part))
    k = rng.integers(1, 6)
    hot = rng.choice(len(part), size=k, replace=False)
    c[hot] = rng.random(k) + 0.1
    noise = rng.random(len(part)) * 10.0 ** rng.uniform(-8, -1)
    c += noise * (rng.random(len(part)) < 0.3)
    return CapCoefficients.from_partition(part, c, K1)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1e3, 20.0, 5.0, 1.0]),
       st.sampled_from([0.5, 2.0**-7, 3.0, 1e6]))
def test_classification_is_scale_invariant(seed, margin_const, s):
    coeffs = random_coeffs(np.random.default_rng(seed), 8, 3)
    a = classify_point_3d(coeffs, margin_const=margin_const)
    b = classify_point_3d(coeffs.scaled(s), margin_const=margin_const)
    assert (a.tag, a.indices, a.line, a.strip_condition) == (b.tag, b.indices, b.line, b.strip_condition)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([20.0, 5.0, 1.0]))
def test_witnesses_satisfy_their_conditions(seed, margin_const):
    rng = np.random.default_rng(seed)
    coeffs = random_coeffs(rng, 8, 3)
    pc = classify_point_3d(coeffs, margin_const=margin_const)
    c, P, K = coeffs.values, coeffs.centers, coeffs.K
    thr = c.max() * K**-4.0
    assert pc.c_star == c.max() and pc.alpha_star == int(np.argmax(c))
    if pc.tag == BROAD:
        a, b, g = pc.indices
        assert min(c[a], c[b], c[g]) > thr
        d, r = P[b] - P[a], P[g] - P[a]
        h = abs(d[0] * r[1] - d[1] * r[0]) / np.linalg.norm(d)
        assert np.linalg.norm(P[a] - P[b]) >= np.linalg.norm(P[a] - P[g]) >= h > margin_const / K
    elif pc.tag == NARROW:
        far = np.linalg.norm(P - P[pc.alpha_star], axis=1) > 1 / coeffs.K1
        assert np.all(c[far] <= thr)
    else:
        s2 = pc.indices[1]
        assert c[s2] > thr and np.linalg.norm(P[s2] - P[pc.alpha_star]) > 1 / coeffs.K1
        big = np.flatnonzero(c > thr)
        assert not brute_noncoplanar(P[big], margin_const / K) if len(big) <= 12 else True


# -- certificate ----------------------------------------------------------------------


def test_certificate_of_zero_field():
    coeffs = sparse([(0, 0), (0.5, 0), (0, 0.5)], [0, 0, 0], K=20, K1=4, count=400)
    cert = broad_pointwise_certificate(0.0, coeffs, (0, 1, 2))
    assert cert.lhs == 0 and cert.rhs == 0 and cert.holds


def test_certificate_factor():
    assert certificate_factor(20, 3, 400, 4) == 20.0**6
    assert certificate_factor(10, 4, 1000, 4) == 10.0**7


def test_certificate_at_the_threshold():
    K = 20
    count = K * K
    c = np.full(count, K**-4.0 * (1 + 1e-12))
    c[0] = 1.0
    coeffs = CapCoefficients.from_partition(CapPartition(K, 2), c, 4)
    # worst admissible value: every cap's contribution adds up in phase
    cert = broad_pointwise_certificate(c.sum(), coeffs, (0, 1, 2), eps_moll=0.0)
    assert cert.holds
    with pytest.raises(CertificateError):
        broad_pointwise_certificate(cert.rhs * 1.0001, coeffs, (0, 1, 2), eps_moll=0.0)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_certificate_never_fails_on_classifier_output(seed, phase_frac):
    rng = np.random.default_rng(seed)
    coeffs = random_coeffs(rng, 8, 3)
    pc = classify_point_3d(coeffs, margin_const=1.0)
    if pc.tag != BROAD:
        return
    # any value the majorants allow: |Tf| <= sum_alpha c_alpha
    tf = coeffs.values.sum() * phase_frac * np.exp(2j * np.pi * rng.random())
    assert broad_pointwise_certificate(tf, coeffs, pc.indices, eps_moll=0.0).holds


def test_broad_example_with_random_field():
    K, K1 = 20, 4
    phase = PhaseFunction.extension(Surface.paraboloid(3))
    a = np.array([1.0, -2.0, 3.0])
    part = CapPartition(K, 2)
    W = 7.0 * K + np.linalg.norm(a)
    lat = Lattice.box((-0.5, -0.5), (0.5, 0.5), required_h(phase, [-W] * 3, [W] * 3, (-0.5, -0.5), (0.5, 0.5)))
    nodes = lat.nodes()
    cell = part.assign(nodes)
    keep = np.isin(cell, part.assign(np.array([(0, 0), (0.45, 0), (0, 0.45)])))
    rng = np.random.default_rng(0)
    vals = (rng.random(len(nodes)) * np.exp(2j * np.pi * rng.random(len(nodes))) * keep).reshape(lat.shape)
    f = SampledField(lat, vals)
    res = decompose_ball(phase, f, part, a, K1, margin_const=5)
    assert res.point_class.tag == BROAD
    assert res.certificate.holds and res.certificate.ratio <= 1


# -- n-dimensional descent -------------------------------------------------------------


PARA4 = Surface.paraboloid(4)


def test_four_independent_normals_are_broad():
    pts = [(0, 0, 0), (0.4, 0, 0), (0, 0.4, 0), (0, 0, 0.4)]
    coeffs = sparse(pts, [1, 1, 1, 1], K=10, K1=3)
    lev = classify_point_nd(coeffs, PARA4, 4)
    assert lev.kind == "broad"
    assert sorted(lev.indices) == [0, 1, 2, 3]
    assert lev.volume == pytest.approx(transversality_volume(gauss_normal(PARA4, np.array(pts))))


def test_planar_normals_descend_twice():
    pts = [(t, 0, 0) for t in np.linspace(-0.4, 0.4, 9)]
    levels = classify_nd(sparse(pts, np.ones(9), K=10, K1=3), PARA4)
    assert [lev.kind for lev in levels] == ["descend", "descend", "broad"]
    assert levels[-1].m == 2


def test_single_cap_descends_at_every_level():
    coeffs = sparse([(0.1, 0.2, -0.1)], [1.0], K=10, K1=3)
    levels = classify_nd(coeffs, PARA4)
    assert [lev.m for lev in levels] == [4, 3, 2]
    assert all(lev.kind == "descend" for lev in levels)


def test_level_one_is_rejected():
    coeffs = sparse([(0, 0, 0)], [1.0], K=10, K1=3)
    with pytest.raises(DomainError):
        classify_point_nd(coeffs, PARA4, 1, np.eye(4)[:1])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_descent_contains_significant_caps(seed):
    rng = np.random.default_rng(seed)
    part = CapPartition(4, 3)
    c = rng.random(len(part)) ** 8
    coeffs = CapCoefficients.from_partition(part, c, 2)
    levels = classify_nd(coeffs, PARA4)
    assert len(levels) <= PARA4.n - 1
    N = gauss_normal(PARA4, coeffs.centers)
    active = np.arange(len(c))
    for lev in levels:
        if lev.kind == "broad":
            assert len(lev.indices) == lev.m
            break
        B = lev.basis
        assert np.allclose(B @ B.T, np.eye(lev.m - 1), atol=1e-10)
        dist = np.linalg.norm(N - (N @ B.T) @ B, axis=1)
        excluded = np.setdiff1d(active, lev.members)
        assert np.all(c[excluded] <= lev.threshold)
        assert np.all(dist[lev.members] <= lev.radius * (1 + 1e-9) + 1e-12)
        active = lev.members


# -- quadruple filter ------------------------------------------------------------------


def test_equal_pairs_are_accepted():
    r = coplanar_quadruple_filter(0.9, 0.9, 0.1, 0.1, K=10**9, K1=10, sep_const=5)
    assert r.accepted and r.diffs == (0, 0) and r.conclusion_holds


def test_unbalanced_squares_are_rejected():
    K1, K = 10**3, 10**9
    t = (0.5, 0.5 - 1.5 / K1, 0.1, 0.1 - 1.5 / K1)
    # the literal separation 10^6 / K1 cannot be met inside [0, 1]
    assert "precondition" in coplanar_quadruple_filter(*t, K=K, K1=K1).reason
    r = coplanar_quadruple_filter(*t, K=K, K1=K1, sep_const=1)
    assert not r.accepted and r.reason == "quadratic constraint fails"
    gap = abs(Fraction(t[0]) ** 2 - Fraction(t[1]) ** 2 - Fraction(t[2]) ** 2 + Fraction(t[3]) ** 2)
    assert gap == pytest.approx(0.8 * 1.5 / K1, rel=1e-3)


def test_preconditions_are_reported():
    assert "2/K1" in coplanar_quadruple_filter(0.5, 0.8, 0.1, 0.1, K=10**6, K1=10, sep_const=1).reason
    assert "[0, 1]" in coplanar_quadruple_filter(1.2, 1.2, 0.1, 0.1, K=10**6, K1=10, sep_const=1).reason


def test_bound_formula_is_exact():
    B, Cp = quadruple_bound(10**5, 10**2, 1, 10)
    eps = Fraction(10**2, 10**5)
    sep = Fraction(10, 10**2)
    assert B == 3 * eps / (2 * sep - eps) + eps
    assert Cp == B * 10**5 / 10**4


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 10**4), st.integers(-200, 200), st.integers(0, 10**4), st.integers(-4, 4))
def test_accepted_quadruples_satisfy_conclusion(u1, a, v1, d):
    K, K1 = 10**4, 10**2
    t1, t2 = Fraction(u1, K), Fraction(u1 - a, K)
    t1p, t2p = Fraction(v1, K), Fraction(v1 - a - d, K)
    r = coplanar_quadruple_filter(t1, t2, t1p, t2p, K=K, K1=K1, C=3, sep_const=10)
    if r.accepted:
        assert r.conclusion_holds


def test_exhaustive_sweep_small():
    rep = quadruple_sweep(2000, 20, C=1, sep_const=4, anchor_step=50)
    assert rep.accepted > 0 and rep.violations == 0
    # cross-check the integer sweep against the rational filter on one anchor
    K, K1 = 2000, 20
    hits = 0
    for a in range(-200, 201, 7):
        for b in range(a - 20, a + 21):
            r = coplanar_quadruple_filter(Fraction(1500, K), Fraction(1500 - a, K), Fraction(500, K),
                                          Fraction(500 - b, K), K=K, K1=K1, C=1, sep_const=4)
            hits += r.accepted
    single = quadruple_sweep(K, K1, C=1, sep_const=4, anchors=[(1500, 500)])
    assert hits <= single.accepted


# -- hyperbolic direction test -------------------------------------------------------------


def test_direction_cases():
    assert hyperbolic_degenerate_direction_test((1, 0), 100) == "strip-case"
    assert hyperbolic_degenerate_direction_test((1 / math.sqrt(2), 1 / math.sqrt(2)), 100) == "generic"
    K1 = 50
    th = math.asin(1 / K1)
    assert hyperbolic_degenerate_direction_test((math.cos(th * 0.999), math.sin(th * 0.999)), K1) == "strip-case"
    assert hyperbolic_degenerate_direction_test((math.cos(th * 1.001), math.sin(th * 1.001)), K1) == "generic"
    with pytest.raises(DomainError):
        hyperbolic_degenerate_direction_test((1, 1), 10)
