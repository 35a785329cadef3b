import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonexp.contraction import (
    DEFAULT_S_SCHEDULE,
    apfs_certify,
    banach_solve,
    default_max_iter,
    loglog_slope,
    resolvent,
    resolvent_nonexpansive_check,
    resolvent_solve,
)
from nonexp.errors import InputError, SolverError
from nonexp.geometry import Ball, Box, Hull, NormSpec
from nonexp.mappings import Identity, MapExpr, ProjectOnto, Rotation

UNIT_SQUARE = Box([0, 0], [1, 1])
SEGMENT = ProjectOnto(Hull([[0, 0], [1, 0]]))


class Opaque(MapExpr):
    """Hides the affine form so the iterative solver path is exercised."""

    kind = "opaque"

    def __init__(self, inner):
        self.inner = inner

    def _eval(self, x):
        return self.inner(x)


def segment_resolvent(x, s):
    # z = x/s + (1 - 1/s) P z with P(z1, z2) = (clamp z1, 0): z1 = x1, z2 = x2 / s
    return np.array([min(max(x[0], 0.0), 1.0), x[1] / s])


def test_halving_map():
    rep = banach_solve(lambda x: x / 2, [1.0], 0.5, tol=1e-9)
    assert abs(rep.fixed_point[0]) <= 1e-9
    assert 28 <= rep.iterations <= 32
    assert rep.a_posteriori_residual <= 1e-9


def test_identity_with_false_q_rejected():
    with pytest.raises(InputError):
        banach_solve(lambda x: x, [0.3, 0.2], 0.5)


def test_ratio_guard_without_probe():
    # a map that expands by 1.01: the ratio guard has to catch it
    with pytest.raises(InputError, match="ratio"):
        banach_solve(lambda x: 1.01 * x + 1, [0.0], 0.5, ratio_probe=False)


def test_bad_q_rejected():
    with pytest.raises(InputError):
        banach_solve(lambda x: x / 2, [1.0], 1.0)


def test_iteration_budget():
    with pytest.raises(SolverError):
        banach_solve(lambda x: 0.99 * x, [1.0], 0.99, tol=1e-12, max_iter=10)


def test_default_max_iter_formula():
    q, tol, diam = 0.5, 1e-9, 1.0
    assert default_max_iter(q, tol, diam) == math.ceil(math.log(tol * (1 - q) / diam) / math.log(q)) + 50


@given(st.floats(min_value=0.05, max_value=0.95), st.floats(min_value=-3, max_value=3))
@settings(max_examples=60, deadline=None)
def test_a_priori_guarantee(q, c):
    # x -> q x + c has fixed point c / (1 - q)
    rep = banach_solve(lambda x: q * x + c, [0.0], q, tol=1e-9)
    assert abs(rep.fixed_point[0] - c / (1 - q)) <= max(1e-9, rep.effective_tolerance)
    d = rep.differences
    noise = 1e-14 * (1 + abs(c / (1 - q)))
    for a, b in zip(d[1:], d[2:]):
        assert b <= (q + 1e-12) * a + noise


def test_uniqueness_from_different_starts():
    T = Opaque(SEGMENT)
    x, s = np.array([0.5, 1.0]), 10.0
    q = 1 - 1 / s
    fn = lambda z: x / s + q * T(z)
    a = banach_solve(fn, [0, 0], q, tol=1e-10)
    b = banach_solve(fn, [1, 1], q, tol=1e-10)
    assert np.linalg.norm(a.fixed_point - b.fixed_point) <= 2e-10


def test_resolvent_closed_form_example():
    assert np.allclose(resolvent(SEGMENT, None, 10, [0.5, 1], UNIT_SQUARE), [0.5, 0.1], atol=1e-9)
    rep = resolvent_solve(Opaque(SEGMENT), None, 10, [0.5, 1], UNIT_SQUARE, tol=1e-12)
    assert rep.method == "banach"
    assert np.allclose(rep.fixed_point, [0.5, 0.1], atol=1e-9)


def test_resolvent_s_one_returns_anchor():
    rot = Opaque(Rotation((0, 1), 1.0))
    assert np.allclose(resolvent(rot, None, 1, [0.3, 0.4]), [0.3, 0.4])


def test_resolvent_fixed_anchor_is_fixed():
    rep = resolvent_solve(Opaque(SEGMENT), None, 64, [0.25, 0.0])
    assert np.allclose(rep.fixed_point, [0.25, 0])
    assert rep.iterations == 1


def test_resolvent_anchor_outside_body():
    with pytest.raises(InputError):
        resolvent(SEGMENT, None, 4, [2, 2], UNIT_SQUARE)


@pytest.mark.parametrize("s", [2, 10, 100, 1000])
@pytest.mark.parametrize("x", [(0.5, 1.0), (0.0, 0.3), (1.0, 1.0), (0.7, 0.0)])
def test_resolvent_identity_and_oracle(s, x):
    T = Opaque(SEGMENT)
    x = np.array(x)
    F = resolvent(T, None, s, x, UNIT_SQUARE)
    assert np.allclose(F, segment_resolvent(x, s), atol=1e-10)
    # F = x/s + (1 - 1/s) T F
    assert np.linalg.norm(F - (x / s + (1 - 1 / s) * T(F))) <= 1e-10


def test_resolvent_with_retraction_argument():
    # R = projection onto x axis segment, T = rotation by pi: T R(z) = (-z1, 0)
    R = ProjectOnto(Box([-1, 0], [1, 0]))
    T = Opaque(Rotation((0, 1), math.pi))
    x, s = np.array([0.6, 0.4]), 8.0
    F = resolvent(T, R, s, x, Box([-1, -1], [1, 1]))
    # z1 = x1/s - (1 - 1/s) z1, z2 = x2 / s
    assert np.allclose(F, [x[0] / s / (2 - 1 / s), x[1] / s], atol=1e-10)


def test_resolvent_nonexpansive_check_passes():
    cert = resolvent_nonexpansive_check(SEGMENT, None, 10, UNIT_SQUARE, sample_count=100)
    assert cert.passed
    assert resolvent_nonexpansive_check(Opaque(SEGMENT), None, 1, UNIT_SQUARE, sample_count=20).passed


def test_apfs_segment_example():
    cert = apfs_certify(SEGMENT, None, [0.5, 1], UNIT_SQUARE, s_schedule=[10])
    assert cert.residuals[0] == pytest.approx(0.1, abs=1e-12)
    assert cert.bounds[0] == pytest.approx(math.sqrt(2) / 10)
    assert cert.passed


def test_apfs_common_fixed_point_has_zero_residuals():
    cert = apfs_certify(SEGMENT, None, [0.4, 0], UNIT_SQUARE)
    assert max(cert.residuals) == 0.0
    assert cert.slope is None


def test_apfs_doubling_schedule_slope():
    cert = apfs_certify(Opaque(SEGMENT), None, [0.5, 1], UNIT_SQUARE, s_schedule=DEFAULT_S_SCHEDULE[:10])
    assert all(b < a for a, b in zip(cert.residuals, cert.residuals[1:]))
    assert cert.slope == pytest.approx(-1, abs=0.1)


def test_apfs_schedule_must_increase():
    with pytest.raises(InputError):
        apfs_certify(SEGMENT, None, [0.5, 1], UNIT_SQUARE, s_schedule=[4, 2])


def test_loglog_slope_exact():
    s = [2.0 ** k for k in range(1, 8)]
    assert loglog_slope(s, [3 / v ** 2 for v in s]) == pytest.approx(-2)


def test_apfs_on_disk_rotation():
    disk = Ball([0, 0], 1)
    rot = Rotation((0, 1), 1.0)
    cert = apfs_certify(rot, None, [1, 0], disk)
    assert cert.passed
    assert max(cert.identity_gaps) <= 1e-9
