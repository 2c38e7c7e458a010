import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pspinlab.gibbs import (
    ReplicaFunctional,
    build_oracle,
    naive_replica_expectation,
    overlap_power,
)
from pspinlab.model import CouplingAssignment, ModelSpec, ModelValidationError
from pspinlab.expansion import (
    MAX_DERIVATIVE_ORDER,
    apply_derivative_factor,
    coefficient_row,
    derivative_power,
    derivative_power_tuple_sum,
    expansion_coefficient,
    fourth_power_identity_check,
    fourth_power_tuple_coefficients,
    series_identity_check,
    signed_basis,
    verify_expansion,
    verify_ode,
)


def random_oracle(n_sites, seed, betas=None, field=0.3):
    rng = np.random.default_rng(seed)
    spec = ModelSpec(n_sites, betas if betas is not None else {2: 0.8}, field)
    couplings = CouplingAssignment(
        {p: rng.normal(size=(n_sites,) * p) for p in spec.orders}
    )
    return spec, couplings, build_oracle(spec, couplings)


# -- integer coefficient table ------------------------------------------------


def test_coefficient_rows_match_printed_values():
    assert coefficient_row(1) == [0, 1]
    assert coefficient_row(2) == [0, 1, 0]
    assert coefficient_row(3) == [0, 1, -2, 0]
    assert coefficient_row(4) == [0, 1, -8, 0, 0]


@pytest.mark.parametrize("m", range(1, 21))
def test_coefficient_support(m):
    row = coefficient_row(m)
    assert len(row) == m + 1
    assert row[0] == 0
    assert all(row[a] == 0 for a in range((m + 1) // 2 + 1, m + 1))
    assert row[1] == 1


def test_expansion_coefficient_edges():
    assert expansion_coefficient(3, 2) == -2
    assert expansion_coefficient(3, 7) == 0
    with pytest.raises(ModelValidationError):
        expansion_coefficient(3, -1)


@pytest.mark.parametrize("bad", [0, -1, 2.0, "3", MAX_DERIVATIVE_ORDER + 1])
def test_coefficient_row_rejects_bad_orders(bad):
    with pytest.raises(ModelValidationError):
        coefficient_row(bad)


# -- signed basis and the derivative operator ---------------------------------


def test_signed_basis_degenerate_orders():
    assert signed_basis((0,), 0, 2).terms == {}
    assert signed_basis((0,), -3, 2).terms == {}
    with pytest.raises(ModelValidationError):
        signed_basis((0,), 1, 0)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_signed_basis_order_one_is_derivative_factor(n):
    mask = 0b11
    basis = signed_basis(mask, 1, n)
    direct = apply_derivative_factor(mask, ReplicaFunctional.one(n))
    assert basis.terms == direct.terms
    assert basis.n_replicas == direct.n_replicas == n + 1


def test_derivative_factor_on_trivial_tuple():
    # an even-multiplicity tuple has mask 0; the factor telescopes to zero
    fn = apply_derivative_factor((0, 0), ReplicaFunctional.one(2))
    assert fn.terms == {}
    assert fn.n_replicas == 3


def test_derivative_power_replica_count():
    fn = derivative_power((0, 1), ReplicaFunctional.one(1), 3)
    assert fn.n_replicas == 4


def test_derivative_power_matches_naive_expectation():
    _, _, oracle = random_oracle(2, seed=0)
    fn = derivative_power((0, 1), ReplicaFunctional.one(1), 2)
    fact = fn.evaluate(oracle)
    brute = naive_replica_expectation(oracle, fn)
    assert brute == pytest.approx(fact, abs=1e-12)


# -- symbolic tuple-sum expansion ---------------------------------------------


def test_tuple_sum_frozen_small_orders():
    assert derivative_power_tuple_sum(1, 1) == {
        frozenset({1}): 1, frozenset({2}): -1}
    assert derivative_power_tuple_sum(2, 1) == {
        frozenset({1, 2}): -2, frozenset({2, 3}): 2}


@pytest.mark.parametrize("order,n", [(1, 1), (2, 2), (3, 1), (3, 2), (4, 1), (4, 2)])
def test_tuple_sum_coefficients_cancel(order, n):
    table = derivative_power_tuple_sum(order, n)
    assert sum(table.values()) == 0


@pytest.mark.parametrize("order,n", [(1, 1), (2, 1), (2, 2), (3, 2), (4, 1)])
def test_tuple_sum_evaluates_like_iterated_operator(order, n):
    _, _, oracle = random_oracle(3, seed=order + 10 * n)
    mask = 0b101
    direct = derivative_power(mask, ReplicaFunctional.one(n), order).evaluate(oracle)
    mu = oracle.moment(mask)
    symbolic = sum(c * mu ** len(labels)
                   for labels, c in derivative_power_tuple_sum(order, n).items())
    assert symbolic == pytest.approx(direct, abs=1e-10)


# -- the expansion identity ---------------------------------------------------


@pytest.mark.parametrize("order", [1, 2, 3, 4])
@pytest.mark.parametrize("n_sites", [2, 3])
def test_expansion_identity_small_grid(order, n_sites):
    for seed in range(3):
        _, _, oracle = random_oracle(n_sites, seed=seed)
        for fn in (ReplicaFunctional.monomial({1: (0,)}, 1),
                   overlap_power(1, 2, 2, n_sites)):
            lhs, rhs = verify_expansion(oracle, (0, n_sites - 1), fn, order)
            assert lhs == pytest.approx(rhs, abs=1e-9)


def test_expansion_identity_third_order_tuple():
    _, _, oracle = random_oracle(3, seed=17, betas={3: 0.5})
    fn = overlap_power(1, 2, 1, 3)
    lhs, rhs = verify_expansion(oracle, (0, 1, 2), fn, 3)
    assert lhs == pytest.approx(rhs, abs=1e-9)


# -- finite-difference checks of the coupling derivative ----------------------


def test_ode_residuals_small():
    for seed in range(3):
        spec, couplings, _ = random_oracle(3, seed=seed)
        fn = overlap_power(1, 2, 2, 3)
        out = verify_ode(spec, couplings, 2, (0, 1), 2, fn)
        assert out["ladder"] <= 1e-6
        assert out["first"] <= 1e-6
        assert out["second"] <= 1e-6


def test_ode_validation():
    spec, couplings, _ = random_oracle(3, seed=5)
    fn = overlap_power(1, 2, 2, 3)
    with pytest.raises(ModelValidationError):
        verify_ode(spec, couplings, 3, (0, 1, 2), 2, fn)
    with pytest.raises(ModelValidationError):
        verify_ode(spec, couplings, 2, (0, 1, 2), 2, fn)
    flat = ModelSpec(3, {2: 0.0}, 0.3)
    with pytest.raises(ModelValidationError):
        verify_ode(flat, couplings, 2, (0, 1), 2, fn)


# -- fourth-power tuple average -----------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_fourth_power_coefficients_cancel(n):
    table = fourth_power_tuple_coefficients(n)
    assert sum(table.values()) == 0


def test_fourth_power_identity_random_realizations():
    for seed in range(5):
        _, _, oracle = random_oracle(3, seed=seed)
        fn = overlap_power(1, 2, 2, 3)
        lhs, rhs = fourth_power_identity_check(oracle, fn)
        assert lhs == pytest.approx(rhs, abs=1e-9)


def test_fourth_power_identity_single_replica():
    _, _, oracle = random_oracle(3, seed=23)
    fn = ReplicaFunctional.monomial({1: (0, 1)}, 1)
    lhs, rhs = fourth_power_identity_check(oracle, fn)
    assert lhs == pytest.approx(rhs, abs=1e-9)


# -- geometric series identity ------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_series_identity_within_tail_bound(data):
    n = data.draw(st.integers(1, 3))
    coeffs = [data.draw(st.floats(-2.0, 2.0)) for _ in range(n + 2)]
    b = data.draw(st.floats(-1.5, 1.5))
    x = data.draw(st.floats(-0.3, 0.3))
    if abs(b * x) > 0.45:
        x = 0.1
    out = series_identity_check(coeffs, b, x, n)
    assert out["residual"] <= out["tail_bound"] + 1e-12


def test_series_identity_validation():
    with pytest.raises(ModelValidationError):
        series_identity_check([1.0, 0.0], 0.5, 0.1, 1)
    with pytest.raises(ModelValidationError):
        series_identity_check([1.0, 0.0, 0.0], 2.0, 0.6, 1)
