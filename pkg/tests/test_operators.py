import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_spd, sphere
from perturbsolve.errors import DimensionError, NotOntoError
from perturbsolve.graded_space import Gauge
from perturbsolve.operators import (
    ImageEllipsoid,
    LinearOperator,
    apply,
    constrained_preimage,
    containment_factor,
    image_of_ball,
    min_gauge_right_inverse,
)


def test_apply_examples():
    assert np.array_equal(apply(LinearOperator(np.eye(2)), [1, 2]), [1, 2])
    assert np.array_equal(apply(LinearOperator(np.zeros((2, 2))), [3, -4]), [0, 0])
    assert np.array_equal(apply(LinearOperator(np.diag([2.0, 3.0])), [1, 1]), [2, 3])
    with pytest.raises(DimensionError):
        apply(LinearOperator(np.eye(2)), [1, 2, 3])


@given(st.integers(0, 10_000), st.floats(-10, 10), st.floats(-10, 10))
def test_apply_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    A = LinearOperator(rng.standard_normal((3, 4)))
    x, y = rng.standard_normal((2, 4))
    lhs = A(a * x + b * y)
    rhs = a * A(x) + b * A(y)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * (np.linalg.norm(lhs) + np.linalg.norm(rhs) + 1)


def test_operator_roundtrip():
    A = LinearOperator(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(LinearOperator.from_dict(A.to_dict()).matrix, A.matrix)


def test_image_of_ball_examples():
    img = image_of_ball(LinearOperator(np.eye(2)), Gauge.euclidean(2))
    assert np.allclose(img.generator, np.eye(2)) and img.full_rank
    seg = image_of_ball(LinearOperator(np.diag([1.0, 0.0])), Gauge.euclidean(2))
    assert not seg.full_rank and seg.rank == 1
    assert seg.gauge([0.5, 0.0]) == pytest.approx(0.5)
    assert seg.gauge([0.0, 0.1]) == np.inf


def test_image_of_ball_contains_images(rng):
    A = LinearOperator(rng.standard_normal((3, 3)))
    U = Gauge(random_spd(rng, 3))
    img = image_of_ball(A, U)
    # Monte Carlo oracle: push sampled points of the U-ball through A
    x = sphere(rng, 1000, 3) * rng.random((1000, 1)) ** (1 / 3)
    x = x / U(x)[:, None] * rng.random((1000, 1))
    assert np.all(U(x) <= 1 + 1e-12)
    vals = [img.gauge(A(p)) for p in x]
    assert max(vals) <= 1 + 1e-9


def test_support_function_bounds_samples(rng):
    img = ImageEllipsoid(rng.standard_normal((3, 5)))
    u = sphere(rng, 20000, 5)
    pts = u @ img.generator.T
    for w in sphere(rng, 100, 3):
        sampled = np.max(pts @ w)
        assert sampled <= img.support(w) + 1e-12
        assert img.support(w) <= sampled + 0.05 * img.radius


def test_containment_factor_examples():
    U = Gauge.euclidean(2)
    V = image_of_ball(LinearOperator(np.eye(2)), U)
    assert containment_factor(image_of_ball(LinearOperator(0.3 * np.eye(2)), U), V) == pytest.approx(0.3)
    assert containment_factor(image_of_ball(LinearOperator(np.zeros((2, 2))), U), V) == 0.0


def test_containment_factor_against_sampling(rng):
    U = Gauge(random_spd(rng, 4))
    f, g = LinearOperator(rng.standard_normal((4, 4))), LinearOperator(rng.standard_normal((4, 4)))
    K, V = image_of_ball(f, U), image_of_ball(g, U)
    exact = containment_factor(K, V)
    # boundary of K through the generator, gauge of V by direct linear solve
    pts = sphere(rng, 100_000, 4) @ K.generator.T
    gv = np.linalg.norm(np.linalg.solve(V.generator, pts.T), axis=0)
    assert gv.max() <= exact * (1 + 1e-12)
    assert gv.max() >= 0.99 * exact


def test_containment_factor_homogeneous(rng):
    U = Gauge(random_spd(rng, 3))
    K = image_of_ball(LinearOperator(rng.standard_normal((3, 3))), U)
    V = image_of_ball(LinearOperator(rng.standard_normal((3, 3))), U)
    base = containment_factor(K, V)
    for a in (0.1, 2.0, 7.5):
        assert containment_factor(K.scaled(a), V) == pytest.approx(a * base, rel=1e-12)


def test_containment_requires_onto():
    U = Gauge.euclidean(2)
    with pytest.raises(NotOntoError, match="not onto"):
        containment_factor(
            image_of_ball(LinearOperator(np.eye(2)), U),
            image_of_ball(LinearOperator(np.diag([1.0, 0.0])), U),
        )


def test_right_inverse_examples():
    R = min_gauge_right_inverse(LinearOperator(np.eye(2)), Gauge.euclidean(2))
    assert np.allclose(R.matrix, np.eye(2), atol=1e-15)
    R = min_gauge_right_inverse(LinearOperator(np.array([[1.0, 1.0]])), Gauge.euclidean(2))
    x = R([2.0])
    assert np.allclose(x, [1.0, 1.0])
    assert Gauge.euclidean(2)(x) == pytest.approx(np.sqrt(2))


def test_right_inverse_is_minimal(rng):
    g = LinearOperator(rng.standard_normal((2, 4)))
    U = Gauge(random_spd(rng, 4))
    R = min_gauge_right_inverse(g, U)
    assert np.linalg.norm(g.matrix @ R.matrix - np.eye(2)) <= 1e-10
    y = rng.standard_normal(2)
    best = U(R(y))
    # feasible set oracle: particular solution plus random kernel directions
    _, _, vt = np.linalg.svd(g.matrix)
    kernel = vt[2:].T
    xp = np.linalg.lstsq(g.matrix, y, rcond=None)[0]
    xs = xp + (rng.standard_normal((10_000, 2)) * rng.uniform(0, 3, (10_000, 1))) @ kernel.T
    assert np.allclose(xs @ g.matrix.T, y)
    assert best <= U(xs).min() * (1 + 1e-12)


def test_right_inverse_rank_deficient():
    with pytest.raises(NotOntoError):
        min_gauge_right_inverse(LinearOperator(np.array([[1.0, 1.0], [2.0, 2.0]])), Gauge.euclidean(2))


def test_constrained_preimage_identity_has_no_freedom():
    y = np.array([0.3, -0.4])
    a, b = Gauge.diagonal([4.0, 1.0]), Gauge.euclidean(2)
    res = constrained_preimage(LinearOperator(np.eye(2)), y, [(a, 2.0), (b, 0.25)])
    assert np.allclose(res.x, y)
    assert res.t == pytest.approx(max(a(y) / 2.0, b(y) / 0.25))


def test_constrained_preimage_single_constraint():
    res = constrained_preimage(LinearOperator(np.array([[1.0, 1.0]])), [2.0], [(Gauge.euclidean(2), 2.0)])
    assert np.allclose(res.x, [1.0, 1.0])
    assert res.t == pytest.approx(np.sqrt(2) / 2)


def test_constrained_preimage_matches_grid_search():
    cons = [(Gauge.euclidean(2), 10.0), (Gauge.diagonal([100.0, 1.0]), 10.0)]
    res = constrained_preimage(LinearOperator(np.array([[1.0, 1.0]])), [2.0], cons)
    s = np.arange(-10.0, 10.0 + 1e-12, 1e-4)
    x = np.stack([s, 2 - s], axis=1)
    t = np.maximum(np.linalg.norm(x, axis=1) / 10, np.sqrt(100 * x[:, 0] ** 2 + x[:, 1] ** 2) / 10)
    assert abs(res.t - t.min()) <= 1e-3
    assert res.t <= t.min() + 1e-12


def test_constrained_preimage_two_binding(rng):
    g = LinearOperator(np.array([[1.0, 1.0]]))
    # minimiser of max balances both gauges
    cons = [(Gauge.diagonal([1.0, 9.0]), 1.0), (Gauge.diagonal([9.0, 1.0]), 1.0)]
    res = constrained_preimage(g, [2.0], cons)
    assert res.ratios[0] == pytest.approx(res.ratios[1], rel=1e-9)
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-7)


def _cvx_oracle(g, y, cons):
    cp = pytest.importorskip("cvxpy")
    x = cp.Variable(g.shape[1])
    t = cp.Variable()
    constraints = [g @ x == y] + [cp.norm(gauge.chol.T @ x) <= t * b for gauge, b in cons]
    cp.Problem(cp.Minimize(t), constraints).solve(solver="CLARABEL")
    return float(t.value)


@pytest.mark.parametrize("seed", range(6))
def test_constrained_preimage_many_constraints_vs_conic_solver(seed):
    rng = np.random.default_rng(seed)
    n, m, k = 6, 2, 4
    g = rng.standard_normal((m, n))
    y = rng.standard_normal(m)
    cons = [(Gauge(random_spd(rng, n, cond=50)), rng.uniform(0.5, 2)) for _ in range(k)]
    res = constrained_preimage(LinearOperator(g), y, cons)
    assert np.linalg.norm(g @ res.x - y) <= 1e-10 * np.linalg.norm(y)
    ref = _cvx_oracle(g, y, cons)
    assert res.t == pytest.approx(ref, rel=1e-5)


def test_single_constraint_agrees_with_right_inverse(rng):
    g = LinearOperator(rng.standard_normal((3, 5)))
    U = Gauge(random_spd(rng, 5))
    y = rng.standard_normal(3)
    res = constrained_preimage(g, y, [(U, 1.0)])
    assert res.t == pytest.approx(U(min_gauge_right_inverse(g, U)(y)), rel=1e-8)


@given(st.integers(0, 10_000))
def test_adding_constraints_never_decreases_t(seed):
    rng = np.random.default_rng(seed)
    g = LinearOperator(rng.standard_normal((2, 4)))
    y = rng.standard_normal(2)
    cons = [(Gauge(random_spd(rng, 4)), rng.uniform(0.5, 2)) for _ in range(3)]
    ts = [constrained_preimage(g, y, cons[: i + 1]).t for i in range(3)]
    assert ts[0] <= ts[1] * (1 + 1e-9) and ts[1] <= ts[2] * (1 + 1e-9)


def test_constrained_preimage_rank_deficient():
    with pytest.raises(NotOntoError):
        constrained_preimage(LinearOperator(np.zeros((1, 2))), [1.0], [(Gauge.euclidean(2), 1.0)])
