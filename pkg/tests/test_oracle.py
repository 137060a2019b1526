import ast
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_spd
from perturbsolve import oracle
from perturbsolve.graded_space import Gauge
from perturbsolve.operators import LinearOperator, containment_factor, image_of_ball
from perturbsolve.oracle import direct_least_squares, monte_carlo_sup_gauge, neumann_reference


def test_least_squares_examples():
    ls = direct_least_squares(LinearOperator(0.75 * np.eye(2)), [0.5, 0.0])
    assert np.allclose(ls.z_star, [2 / 3, 0.0]) and ls.residual <= 1e-15
    ls = direct_least_squares(LinearOperator(np.zeros((2, 2))), [3.0, 4.0])
    assert np.array_equal(ls.z_star, [0.0, 0.0]) and ls.residual == pytest.approx(1.0)
    ls = direct_least_squares(LinearOperator(np.eye(3)), [1.0, -2.0, 0.5])
    assert np.allclose(ls.z_star, [1.0, -2.0, 0.5])


@given(st.integers(0, 10_000))
def test_least_squares_beats_any_candidate(seed):
    rng = np.random.default_rng(seed)
    h = LinearOperator(rng.standard_normal((4, 3)))
    y = rng.standard_normal(4)
    ls = direct_least_squares(h, y)
    z = ls.z_star + 0.1 * rng.standard_normal(3)
    other = np.linalg.norm(h(z) - y) / max(np.linalg.norm(y), 1.0)
    assert ls.residual <= other + 1e-12


def test_monte_carlo_examples():
    U = Gauge.euclidean(2)
    K = image_of_ball(LinearOperator(0.3 * np.eye(2)), U)
    v = monte_carlo_sup_gauge(K, U, trials=10_000, seed=0)
    assert 0.299 <= v <= 0.3 + 1e-15
    assert monte_carlo_sup_gauge(image_of_ball(LinearOperator(np.zeros((2, 2))), U), U) == 0.0
    with pytest.raises(ValueError):
        monte_carlo_sup_gauge(K, U, trials=0)


def test_monte_carlo_approaches_exact_factor(rng):
    U = Gauge(random_spd(rng, 4))
    K = image_of_ball(LinearOperator(rng.standard_normal((4, 4))), U)
    V = image_of_ball(LinearOperator(rng.standard_normal((4, 4))), U)
    exact = containment_factor(K, V)
    mc = monte_carlo_sup_gauge(K, V, trials=100_000, seed=1)
    assert 0.99 * exact <= mc <= exact * (1 + 1e-12)
    assert monte_carlo_sup_gauge(K, V, trials=500, seed=4) == monte_carlo_sup_gauge(K, V, trials=500, seed=4)


def test_neumann_examples():
    y0 = np.array([0.5, 0.0])
    ns = neumann_reference(LinearOperator(np.zeros((2, 2))), y0, 4)
    assert all(np.array_equal(s, y0) for s in ns.partial_sums) and not ns.diverging
    ns = neumann_reference(LinearOperator(-0.25 * np.eye(2)), y0, 3)
    assert np.allclose(ns.partial_sums, [[0.5, 0], [0.625, 0], [0.65625, 0]], rtol=0, atol=1e-15)
    ns = neumann_reference(LinearOperator(1.5 * np.eye(2)), y0, 6)
    assert ns.diverging and len(ns.partial_sums) == 6
    with pytest.raises(ValueError):
        neumann_reference(LinearOperator(np.ones((2, 3))), [1.0, 1.0], 2)


def test_oracle_does_not_import_solver_or_covering():
    tree = ast.parse(Path(oracle.__file__).read_text())
    names = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            names.add(node.module or "")
        elif isinstance(node, ast.Import):
            names.update(a.name for a in node.names)
    assert not any(n.endswith(("solver", "covering", "pipeline")) for n in names)
