import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonexp.errors import ConfigurationError, InputError
from nonexp.geometry import (
    Ball,
    Box,
    Hull,
    NormSpec,
    Polytope,
    body_from_json,
    diameter,
    norm,
    project,
    project_hull_faces,
    project_hull_wolfe,
    sample,
    sample_pairs,
)

coord = st.floats(min_value=-5, max_value=5, allow_nan=False, allow_infinity=False)
point2 = st.tuples(coord, coord).map(np.array)


def segment_projection(a, b, x):
    """Clamp the line parameter: the textbook nearest point on [a, b]."""
    a, b, x = map(np.asarray, (a, b, x))
    t = np.clip(np.dot(x - a, b - a) / np.dot(b - a, b - a), 0.0, 1.0)
    return a + t * (b - a)


def active_set_projection(A, b, x):
    """Brute force over every set of at most d tight constraints."""
    d = A.shape[1]
    best, best_dist = None, np.inf
    for k in range(d + 1):
        for idx in itertools.combinations(range(len(b)), k):
            if k == 0:
                cand = x.copy()
            else:
                M = A[list(idx)]
                if np.linalg.matrix_rank(M) < k:
                    continue
                # minimize |z - x| subject to M z = b_idx
                lam = np.linalg.solve(M @ M.T, M @ x - b[list(idx)])
                cand = x - M.T @ lam
            if np.all(A @ cand <= b + 1e-12):
                dist = np.linalg.norm(cand - x)
                if dist < best_dist:
                    best, best_dist = cand, dist
    return best


def test_norm_examples():
    assert norm(NormSpec("euclidean", 2), [3, 4]) == 5
    assert norm(NormSpec("max", 2), [-2, 1]) == 2
    assert norm(NormSpec("sum", 3), [1, 1, 1]) == 3


def test_norm_dimension_mismatch():
    with pytest.raises(InputError):
        norm(NormSpec("euclidean", 2), [1, 2, 3])


def test_unknown_norm_kind():
    with pytest.raises(InputError):
        NormSpec("taxicab", 2)


def test_projection_examples():
    e = NormSpec("euclidean", 2)
    assert np.allclose(project(Box([0, 0], [1, 1]), [2, 0.5], e), [1, 0.5])
    assert np.allclose(project(Ball([0, 0], 1), [3, 4], e), [0.6, 0.8])
    assert np.allclose(project(Hull([[0, 0], [1, 0]]), [0.5, 1], e), [0.5, 0])


def test_projection_refuses_other_norms():
    with pytest.raises(ConfigurationError):
        project(Box([0, 0], [1, 1]), [2, 2], NormSpec("max", 2))


def test_diameter_examples():
    e = NormSpec("euclidean", 2)
    assert diameter(Box([0, 0], [1, 1]), e) == pytest.approx(math.sqrt(2))
    assert diameter(Ball([0, 0], 1), e) == 2
    assert diameter(Hull([[0, 0], [1, 0], [0, 1]]), e) == pytest.approx(math.sqrt(2))


def test_diameter_other_norms():
    box = Box([0, 0], [1, 2])
    assert diameter(box, NormSpec("max", 2)) == 2
    assert diameter(box, NormSpec("sum", 2)) == 3


def test_sample_interval():
    pts = sample(Box([0], [1]), 3)
    assert [p.item() for p in pts] == [0, 1, 0.5]


def test_sample_is_deterministic_and_inside():
    body = Ball([0.5, -1], 2)
    a = sample(body, 40, seed=3)
    b = sample(body, 40, seed=3)
    assert all(np.array_equal(p, q) for p, q in zip(a, b))
    assert all(body.contains(p) for p in a)
    assert len({p.tobytes() for p in a}) == 40


def test_sample_pairs_count():
    pairs = sample_pairs(Box([0, 0], [1, 1]), 500)
    assert len(pairs) == 500


def test_polytope_unbounded_rejected():
    with pytest.raises(InputError, match="unbounded"):
        Polytope([[1, 0], [0, 1]], [1, 1])


def test_polytope_empty_rejected():
    with pytest.raises(InputError, match="empty"):
        Polytope([[1, 0], [-1, 0], [0, 1], [0, -1]], [-1, -1, 1, 1])


def test_polytope_vertices_of_triangle():
    tri = Polytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    verts = sorted(map(tuple, np.round(tri.vertices(), 12)))
    assert verts == [(0, 0), (0, 1), (1, 0)]


PENTAGON_CUT = Polytope([[-1, 0], [0, -1], [1, 0], [0, 1], [1, 1]], [1, 1, 1, 1, 1.5])


@given(point2)
@settings(max_examples=150, deadline=None)
def test_polytope_projection_matches_active_set_oracle(x):
    got = PENTAGON_CUT.project(x)
    want = active_set_projection(PENTAGON_CUT.normals, PENTAGON_CUT.offsets, x)
    assert np.allclose(got, want, atol=1e-7)


@given(point2)
@settings(max_examples=150, deadline=None)
def test_segment_projection_matches_oracle(x):
    seg = Hull([[-1, 0.5], [2, 1.5]])
    assert np.allclose(seg.project(x), segment_projection([-1, 0.5], [2, 1.5], x), atol=1e-12)


@given(st.tuples(coord, coord, coord).map(np.array))
@settings(max_examples=100, deadline=None)
def test_hull_projection_routes_agree(x):
    V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], dtype=float)
    a = project_hull_faces(V, x)
    b, gap = project_hull_wolfe(V, x)
    assert np.linalg.norm(a - b) <= 1e-6


@pytest.mark.parametrize("body", [
    Box([-1, 0], [1, 2]),
    Ball([0.3, 0.2], 1.5),
    Hull([[0, 0], [2, 0], [1, 2], [0.5, 1]]),
    PENTAGON_CUT,
])
@given(x=point2, y=point2)
@settings(max_examples=60, deadline=None)
def test_projection_properties(body, x, y):
    px, py = body.project(x), body.project(y)
    assert body.contains(px, 1e-8)
    assert np.allclose(body.project(px), px, atol=1e-8)
    # nonexpansive
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-8
    # variational inequality against every extreme point
    for v in body.extreme_points():
        assert np.dot(x - px, v - px) <= 1e-7 * (1 + np.linalg.norm(x - px))


def test_body_json_round_trip():
    for body in (Box([0, 0], [1, 2]), Ball([1, 1], 0.5), Hull([[0, 0], [1, 0], [0, 1]]), PENTAGON_CUT):
        again = body_from_json(body.to_json())
        assert type(again) is type(body)
        assert diameter(again, NormSpec("euclidean", 2)) == pytest.approx(diameter(body, NormSpec("euclidean", 2)))


def test_body_json_halfspace_pairs():
    body = body_from_json({"shape": "polytope", "halfspaces": [[[1, 0], 1], [[-1, 0], 1], [[0, 1], 1], [[0, -1], 1]]})
    assert body.contains([1, 1]) and not body.contains([1.1, 0])


def test_body_json_errors():
    with pytest.raises(InputError):
        body_from_json({"shape": "torus"})
    with pytest.raises(InputError):
        body_from_json({"shape": "box", "lo": [0, 0]})
    with pytest.raises(InputError):
        Box([1, 0], [0, 1])
