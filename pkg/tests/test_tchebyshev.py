import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import nnls

from nonexp.errors import ConfigurationError, HypothesisError, InputError
from nonexp.geometry import NormSpec
from nonexp.mappings import Affine, Constant, Identity, Rotation
from nonexp.tchebyshev import (
    chebyshev_center,
    fixed_point_in_center,
    grid_center_oracle,
    invariance_check,
    minimum_enclosing_ball,
)

E2 = NormSpec("euclidean", 2)
MAX2 = NormSpec("max", 2)


def orbit(k, start_angle=0.0, radius=1.0):
    t = start_angle + 2 * np.pi * np.arange(k) / k
    return radius * np.c_[np.cos(t), np.sin(t)]


def in_hull_of_support(P, c, r, tol=1e-7):
    """Optimality certificate: the center is a convex combination of the farthest points."""
    S = P[np.abs(np.linalg.norm(P - c, axis=1) - r) <= tol * max(1, r)]
    M = np.vstack([S.T, np.ones(len(S))])
    w, res = nnls(M, np.r_[c, 1.0])
    return res <= 1e-6


def test_center_examples():
    r = chebyshev_center([[0, 0], [2, 0]], E2)
    assert np.allclose(r.center, [1, 0]) and r.radius == pytest.approx(1)
    r = chebyshev_center([[0, 0], [1, 0], [0, 1]], E2)
    assert np.allclose(r.center, [0.5, 0.5])
    assert r.radius == pytest.approx(0.7071067811865476, abs=1e-12)
    r = chebyshev_center([[0, 0], [4, 2]], MAX2)
    assert np.allclose(r.center, [2, 1]) and r.radius == 2
    lo, hi = r.center_box
    assert np.allclose(lo, [2, 0]) and np.allclose(hi, [2, 2])


def test_hypotenuse_center_matches_grid_oracle():
    A = [[0, 0], [1, 0], [0, 1]]
    c, r = grid_center_oracle(A, E2)
    assert r == pytest.approx(math.sqrt(2) / 2, abs=2e-3)
    assert np.allclose(c, [0.5, 0.5], atol=2e-3)


def test_empty_set_rejected():
    with pytest.raises(InputError):
        chebyshev_center(np.zeros((0, 2)), E2)


def test_degenerate_inputs():
    dup = chebyshev_center([[1, 1], [1, 1], [1, 1]], E2)
    assert dup.radius == 0 and np.allclose(dup.center, [1, 1])
    line = chebyshev_center([[0, 0], [1, 1], [3, 3], [2, 2]], E2)
    assert np.allclose(line.center, [1.5, 1.5]) and line.radius == pytest.approx(1.5 * math.sqrt(2))


pts2 = st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=12).map(np.array)


@given(pts2, st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_euclidean_center_is_order_free_and_optimal(P, rnd):
    res = chebyshev_center(P, E2)
    assert res.encloses
    perm = list(range(len(P)))
    rnd.shuffle(perm)
    again = chebyshev_center(P[perm], E2)
    assert np.linalg.norm(again.center - res.center) <= 1e-7
    assert in_hull_of_support(P, res.center, res.radius)


@pytest.mark.parametrize("seed", range(3))
def test_three_dimensional_ball_is_optimal(seed):
    P = np.random.default_rng(seed).normal(size=(15, 3))
    c, r = minimum_enclosing_ball(P)
    assert np.max(np.linalg.norm(P - c, axis=1)) <= r + 1e-9
    assert in_hull_of_support(P, c, r)


@given(pts2)
@settings(max_examples=100, deadline=None)
def test_max_norm_center_box(P):
    res = chebyshev_center(P, MAX2)
    lo, hi = res.center_box
    # every corner of the center box is itself a center
    for corner in ([lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]):
        assert np.max(np.abs(P - corner)) <= res.radius + 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_max_and_sum_norms_match_grid_oracle(seed):
    P = np.random.default_rng(seed).uniform(-1, 1, size=(7, 2))
    for space in (MAX2, NormSpec("sum", 2)):
        res = chebyshev_center(P, space)
        _, r = grid_center_oracle(P, space)
        assert res.encloses
        assert res.radius <= r + 1e-9
        assert r - res.radius <= 2e-3
    assert chebyshev_center(P, NormSpec("sum", 2)).optimality_gap <= 1e-7


def test_center_is_not_monotone():
    A = np.array([[0.0, 0.0], [2.0, 0.0]])
    B = np.vstack([A, [1.0, 5.0]])
    cA, cB = chebyshev_center(A, E2), chebyshev_center(B, E2)
    # circumcenter of the acute triangle B: 1 + y^2 = (5 - y)^2 gives y = 2.4
    assert np.allclose(cB.center, [1, 2.4]) and cB.radius == pytest.approx(2.6)
    for P, res in ((A, cA), (B, cB)):
        gc, gr = grid_center_oracle(P, E2)
        assert abs(gr - res.radius) <= 2e-3 and np.linalg.norm(gc - res.center) <= 2e-2
    # the only center of A is not a center of B
    assert np.max(np.linalg.norm(B - cA.center, axis=1)) > cB.radius + 1


def test_invariance_examples():
    tri = orbit(3)
    cert = invariance_check(Rotation((0, 1), 2 * math.pi / 3), tri, E2)
    assert cert.passed
    assert np.allclose(cert.details["imageOfCenter"], [0, 0], atol=1e-12)
    A = np.random.default_rng(3).normal(size=(6, 2))
    assert invariance_check(Identity(), A, E2).passed


def test_invariance_refuses_when_set_not_preserved():
    with pytest.raises(HypothesisError, match="preservesSet"):
        invariance_check(Constant([0, 0]), orbit(4), E2)


def test_pentagon_fixed_point():
    A = orbit(5)
    fam = [Rotation((0, 1), 2 * math.pi / 5), Rotation((0, 1), 4 * math.pi / 5)]
    point, cert = fixed_point_in_center(fam, A, E2)
    assert cert.passed
    assert np.linalg.norm(point) <= 1e-9


def test_identity_family_returns_center():
    A = np.array([[0.0, 0.0], [3.0, 1.0], [1.0, 2.0]])
    point, cert = fixed_point_in_center([Identity()], A, E2)
    assert np.allclose(point, chebyshev_center(A, E2).center)


def test_reflection_fixes_center():
    flip = Affine(np.diag([1.0, -1.0]))
    point, cert = fixed_point_in_center([flip], [[0, 1], [0, -1]], E2)
    assert np.allclose(point, [0, 0]) and cert.passed


def test_max_norm_fixed_point_inside_box():
    # the max-norm center set of this square is a single point; the half turn fixes it
    A = [[1, 1], [-1, 1], [-1, -1], [1, -1]]
    point, cert = fixed_point_in_center([Rotation((0, 1), math.pi)], A, MAX2)
    assert cert.passed and np.linalg.norm(point) <= 1e-7


def test_max_norm_fixed_point_in_nontrivial_box():
    # center box of {(0,0),(4,0),(0,1),(4,1)} is {2} x [-1, 2]; a reflection in y = 0.5 keeps A
    A = [[0, 0], [4, 0], [0, 1], [4, 1]]
    flip = Affine(np.diag([1.0, -1.0]), [0.0, 1.0])
    point, cert = fixed_point_in_center([flip], A, MAX2)
    assert cert.passed
    assert np.allclose(point, [2, 0.5], atol=1e-6)


def test_sum_norm_fixed_point_not_supported():
    with pytest.raises(ConfigurationError):
        fixed_point_in_center([Identity()], [[0, 0], [1, 0]], NormSpec("sum", 2), check=False)
