"""Tests for the mLRTP spline basis, the Omega factor and the b-space transform."""

import numpy as np
import pytest

from gmcprior.errors import DegeneratePartition, DimensionMismatch, DomainError, SingularOmega
from gmcprior.tools.spline_basis import (
    Partition,
    build_partition,
    design_matrix,
    eval_basis,
    eval_curve,
    eval_derivative,
    from_b_space,
    omega_factor,
    to_b_space,
    transformed_design,
)


@pytest.fixture
def half():
    return Partition(np.array([0.0, 0.5, 1.0]))


@pytest.fixture
def thirds():
    return build_partition(3, "equal")


def test_equal_partition_knots():
    p = build_partition(4, "equal")
    assert p.knots.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert p.K == 4
    assert p.label == "K=4/equal"


def test_quantile_partition_uses_linear_quantiles():
    t = np.linspace(0.01, 1.0, 100)
    p = build_partition(10, "quantile", t)
    assert p.K == 10
    assert p.knots[0] == 0.0 and p.knots[-1] == 1.0
    assert np.all(np.diff(p.knots) > 0)
    assert p.knots[1:-1] == pytest.approx(np.quantile(t, np.arange(1, 10) / 10, method="linear"))


def test_quantile_partition_needs_enough_distinct_values():
    with pytest.raises(DegeneratePartition):
        build_partition(3, "quantile", [0.2, 0.2, 0.7, 0.7])


@pytest.mark.parametrize("knots", [[0.0, 0.5, 0.5, 1.0], [0.1, 0.5, 1.0], [0.0, 0.5, 0.9]])
def test_partition_rejects_bad_knots(knots):
    with pytest.raises(DegeneratePartition):
        Partition(np.array(knots))


def test_eval_basis_hand_values(half):
    assert eval_basis(0.0, half).tolist() == [1.0, 0.0, 0.0]
    assert eval_basis(1.0, half) == pytest.approx([1.0, 1.0, 0.0])
    assert eval_basis(0.5, half) == pytest.approx([1.0, 0.5, -0.125])


def test_eval_basis_at_zero_is_unit_intercept_row():
    for K in (2, 5, 10):
        row = eval_basis(0.0, build_partition(K))
        assert row[0] == 1.0
        assert np.all(row[1:] == 0.0)


def test_eval_basis_outside_domain(half):
    with pytest.raises(DomainError):
        eval_basis(1.5, half)
    # within tolerance is clipped, not rejected
    assert eval_basis(1.0 + 1e-13, half) == pytest.approx([1.0, 1.0, 0.0])


def test_design_matrix_rows_and_empty_input(half):
    x = design_matrix([0.0, 1.0], half)
    assert x == pytest.approx(np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]]))
    assert design_matrix(np.array([]), half).shape == (0, 3)
    same = design_matrix([0.0, 0.0], build_partition(5))
    assert np.array_equal(same[0], same[1])


def test_omega_hand_value(thirds):
    f = omega_factor(thirds)
    assert f.omega == pytest.approx(np.array([[0.0, 1 / 27], [1 / 27, 0.0]]))
    assert f.condition == pytest.approx(1.0)


def test_omega_factor_properties():
    f = omega_factor(build_partition(10))
    assert np.allclose(f.omega, f.omega.T)
    assert np.all(np.diag(f.omega) == 0.0)
    assert f.sqrt @ f.inv_sqrt == pytest.approx(np.eye(9), abs=1e-10)
    # sqrt' sqrt is the positive factor (Omega' Omega)^{1/2}
    w, v = np.linalg.eigh(f.omega.T @ f.omega)
    positive = (v * np.sqrt(w)) @ v.T
    assert f.sqrt.T @ f.sqrt == pytest.approx(positive, abs=1e-10)


def test_omega_singular_for_single_interior_knot(half):
    with pytest.raises(SingularOmega):
        omega_factor(half)


def test_b_space_transform(thirds):
    f = omega_factor(thirds)
    beta = np.array([1.5, -2.0, 0.0, 0.0])
    assert to_b_space(beta, f) == pytest.approx(beta)

    b = to_b_space(np.array([0.0, 0.0, 1.0, 0.0]), f)
    assert b[2:] == pytest.approx(f.sqrt[:, 0])

    assert from_b_space(np.zeros(4), f).beta == pytest.approx(np.zeros(4))
    with pytest.raises(DimensionMismatch):
        to_b_space(np.zeros(3), f)


def test_b_space_round_trip_and_curve_invariance():
    rng = np.random.default_rng(7)
    p = build_partition(8)
    f = omega_factor(p)
    t = rng.uniform(0.0, 1.0, 50)
    for _ in range(5):
        beta = rng.normal(size=p.K + 1)
        b = to_b_space(beta, f)
        assert from_b_space(b, f).beta == pytest.approx(beta, abs=1e-10)
        assert transformed_design(t, p, f) @ b == pytest.approx(design_matrix(t, p) @ beta, abs=1e-10)


def test_derivative_linear_curve():
    p = build_partition(5)
    beta = np.array([0.3, 2.5, 0.0, 0.0, 0.0, 0.0])
    for t in (0.0, 0.33, 1.0):
        assert eval_derivative(t, p, beta) == pytest.approx(2.5)


def test_derivative_vanishes_at_own_knot(half):
    beta = np.array([0.0, 0.0, 4.0])
    assert eval_derivative(0.5, half, beta) == 0.0


def test_derivative_matches_finite_differences():
    rng = np.random.default_rng(11)
    p = build_partition(10)
    h = 1e-5
    for _ in range(10):
        beta = rng.normal(size=p.K + 1)
        for t in rng.uniform(0.01, 0.99, 10):
            fd = (eval_curve([t + h], p, beta)[0] - eval_curve([t - h], p, beta)[0]) / (2 * h)
            assert eval_derivative(t, p, beta) == pytest.approx(fd, rel=1e-6, abs=1e-6)


def test_curve_is_continuous():
    rng = np.random.default_rng(3)
    p = build_partition(6)
    beta = rng.normal(size=p.K + 1)
    grid = np.linspace(0.0, 1.0, 20001)
    assert np.max(np.abs(np.diff(eval_curve(grid, p, beta)))) < 1e-2


def test_derivative_dimension_check(half):
    with pytest.raises(DimensionMismatch):
        eval_derivative(0.2, half, np.zeros(5))
