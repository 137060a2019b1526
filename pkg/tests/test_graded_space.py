import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_spd
from perturbsolve.errors import DimensionError, NestingError
from perturbsolve.graded_space import (
    Gauge,
    GradedSpace,
    gauge_eval,
    graded_sequence_system,
    intersection_gauge,
    membership,
    normalize_fundamental_system,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def vec(n):
    return arrays(np.float64, n, elements=finite)


@st.composite
def gauges(draw, n=3):
    seed = draw(st.integers(0, 2**31 - 1))
    return Gauge(random_spd(np.random.default_rng(seed), n, cond=100.0))


def test_gauge_eval_examples():
    assert gauge_eval(Gauge.euclidean(2), [3, 4]) == pytest.approx(5.0, abs=0)
    assert gauge_eval(Gauge.diagonal([4, 1]), [1, 0]) == 2.0
    assert gauge_eval(Gauge.euclidean(2), [0, 0]) == 0.0


def test_gauge_eval_dimension_mismatch():
    with pytest.raises(DimensionError):
        gauge_eval(Gauge.euclidean(2), [1, 2, 3])


def test_membership_examples():
    ball = Gauge.euclidean(2)
    assert membership(ball, [0.5, 0], 1, 0) == (True, 0.5)
    assert membership(ball, [2, 0], 1, 0) == (False, 2.0)
    assert membership(ball, [1 + 1e-9, 0], 1, 1e-6).inside
    assert not membership(ball, [1 + 1e-9, 0], 1, 0).inside


def test_membership_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        membership(Gauge.euclidean(1), [1.0], 0.0)


def test_construction_errors():
    with pytest.raises(DimensionError):
        Gauge(np.zeros((0, 0)))
    with pytest.raises(ValueError):
        Gauge(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        Gauge(np.diag([1.0, -1.0]))
    with pytest.raises(DimensionError):
        GradedSpace(0, (Gauge.euclidean(1),))


@given(gauges(), vec(3), vec(3))
def test_triangle_inequality(g, x, y):
    assert g(x + y) <= g(x) + g(y) + 1e-9 * (g(x) + g(y))


@given(gauges(), vec(3), st.floats(-50, 50))
def test_homogeneity(g, x, a):
    assert g(a * x) == pytest.approx(abs(a) * g(x), rel=1e-12, abs=1e-12)


@given(gauges(n=4))
def test_cholesky_roundtrip(g):
    back = Gauge.from_dict(g.to_dict())
    assert np.linalg.norm(back.quad - g.quad) <= 1e-14 * np.linalg.norm(g.quad)


def test_normalize_already_doubling_is_identity():
    system = [Gauge(4.0**p * np.eye(3)) for p in range(1, 5)]
    out, prov = normalize_fundamental_system(system)
    assert prov == [(0, 0), (1, 0), (2, 0), (3, 0)]
    for a, b in zip(out, system):
        assert np.array_equal(a.quad, b.quad)


def test_normalize_identical_balls_scales_by_powers_of_two():
    system = [Gauge.euclidean(2)] * 5
    out, prov = normalize_fundamental_system(system)
    assert prov == [(p, p) for p in range(5)]
    x = np.array([0.3, -1.1])
    for p, g in enumerate(out):
        assert g(x) == pytest.approx(2.0**p * np.linalg.norm(x), rel=1e-15)


def _assert_doubling_by_eigenvalues(out):
    for a, b in zip(out, out[1:]):
        d = b.quad - 4.0 * a.quad
        assert np.linalg.eigvalsh(d)[0] >= -1e-10 * np.linalg.norm(b.quad, 2)


def test_normalize_graded_sequence_dim3():
    system = graded_sequence_system(3, 6)
    out, prov = normalize_fundamental_system(system)
    # eigenvalue oracle over every consecutive pair
    _assert_doubling_by_eigenvalues(out)
    idx = [i for i, _ in prov]
    assert idx == sorted(idx) and len(set(idx)) == len(idx)


def test_normalize_prefers_discarding_when_it_saves_scaling():
    # second gauge barely grows, third one quadruples the first
    system = [Gauge.euclidean(2), Gauge(1.1 * np.eye(2)), Gauge(4.0 * np.eye(2))]
    out, prov = normalize_fundamental_system(system)
    assert prov == [(0, 0), (2, 0)]


@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 5))
def test_normalized_systems_double(seed, n, count):
    rng = np.random.default_rng(seed)
    quads = []
    q = random_spd(rng, n)
    for _ in range(count):
        quads.append(q)
        q = q + random_spd(rng, n) * rng.uniform(0, 2) * (rng.random() < 0.7)
    system = [Gauge(q) for q in quads]
    out, prov = normalize_fundamental_system(system)
    xs = rng.standard_normal((200, n))
    for a, b in zip(out, out[1:]):
        assert np.all(b(xs) >= 2.0 * a(xs) * (1 - 1e-9))
    for g, (i, power) in zip(out, prov):
        rebuilt = Gauge(system[i].quad * 4.0**power)
        assert np.max(np.abs(rebuilt.quad - g.quad)) <= 1e-14 * np.max(np.abs(g.quad))


def test_normalize_errors():
    with pytest.raises(ValueError):
        normalize_fundamental_system([])
    with pytest.raises(NestingError):
        normalize_fundamental_system([Gauge(4 * np.eye(2)), Gauge.euclidean(2)])


def test_graded_space_normalized():
    space = GradedSpace(3, tuple(graded_sequence_system(3, 4))).normalized()
    assert space.is_normalized()
    assert len(space.provenance) == len(space.system)


def test_intersection_examples():
    ball = Gauge.euclidean(2)
    assert intersection_gauge([(ball, 1.0)])([0.5, 0]) == 0.5
    ig = intersection_gauge([(ball, 1.0), (Gauge.diagonal([4, 1]), 0.5)])
    assert ig([0.25, 0]) == pytest.approx(1.0)


def test_intersection_matches_direct_max(rng):
    a, b = Gauge(random_spd(rng, 3)), Gauge(random_spd(rng, 3))
    ig = intersection_gauge([(a, 0.7), (b, 2.5)])
    for x in rng.standard_normal((50, 3)):
        expected = max(membership(a, x, 0.7).ratio, membership(b, x, 2.5).ratio)
        assert ig(x) == pytest.approx(expected, rel=1e-14)


def test_intersection_dimension_mismatch():
    with pytest.raises(DimensionError):
        intersection_gauge([(Gauge.euclidean(2), 1.0), (Gauge.euclidean(3), 1.0)])


@given(gauges(), gauges(), vec(3), vec(3), st.floats(0, 100))
def test_intersection_homogeneous_and_convex(a, b, x, y, alpha):
    ig = intersection_gauge([(a, 0.3), (b, 2.0)])
    assert ig(alpha * x) == pytest.approx(alpha * ig(x), rel=1e-12, abs=1e-9)
    assert ig(0.5 * (x + y)) <= 0.5 * (ig(x) + ig(y)) * (1 + 1e-12) + 1e-12
