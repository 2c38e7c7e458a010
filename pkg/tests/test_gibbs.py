import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pspinlab.model import (
    CouplingAssignment,
    ModelSpec,
    ModelValidationError,
    ResourceCapError,
)
from pspinlab.gibbs import (
    GibbsOracle,
    MetropolisConfig,
    ReplicaFunctional,
    build_oracle,
    detailed_balance_residual,
    free_energy_density,
    fwht,
    mask_to_sites,
    metropolis_chain,
    multi_overlap,
    naive_replica_expectation,
    overlap_power,
    overlap_product_expectation,
    replica_difference,
    replica_expectation,
    sites_to_mask,
    xor_convolve,
)


def random_assignment(spec, rng):
    return CouplingAssignment(
        {p: rng.normal(size=(spec.n_sites,) * p) for p in spec.orders}
    )


def small_oracle(n_sites=3, seed=0, betas=None, field=0.3):
    rng = np.random.default_rng(seed)
    spec = ModelSpec(n_sites, betas if betas is not None else {2: 0.8}, field)
    return build_oracle(spec, random_assignment(spec, rng))


# -- masks and functional algebra ---------------------------------------------


def test_sites_to_mask_parity_reduces():
    assert sites_to_mask((0, 0, 1)) == 0b10
    assert sites_to_mask((2, 1, 2, 1)) == 0
    assert mask_to_sites(0b101) == (0, 2)


def test_monomial_drops_even_multiplicities():
    fn = ReplicaFunctional.monomial({1: (0, 0, 2), 2: (1, 1)}, 2)
    assert fn.terms == {((1, 0b100),): 1.0}


def test_functional_rejects_bad_labels_and_masks():
    with pytest.raises(ValueError):
        ReplicaFunctional({((3, 1),): 1.0}, 2)
    with pytest.raises(ValueError):
        ReplicaFunctional({((0, 1),): 1.0}, 2)
    with pytest.raises(ValueError):
        ReplicaFunctional({((1, 0),): 1.0}, 2)
    with pytest.raises(ValueError):
        ReplicaFunctional.one(-1)


def test_product_cancels_repeated_monomial():
    fn = ReplicaFunctional.monomial({1: (0,)}, 1)
    sq = fn * fn
    assert sq.terms == {(): 1.0}


def test_relabel_merges_colliding_masks():
    fn = ReplicaFunctional.monomial({1: (0,), 2: (0,)}, 2)
    collapsed = fn.relabel({2: 1}, 2)
    assert collapsed.terms == {(): 1.0}


def test_algebra_bookkeeping():
    a = ReplicaFunctional.monomial({1: (0,)}, 1)
    b = ReplicaFunctional.monomial({2: (1,)}, 2, coeff=2.0)
    total = a + b
    assert len(total) == 2
    assert total.n_replicas == 2
    assert total.max_label == 2
    assert (total - total).terms == {}
    assert a.scaled(0.0).terms == {}
    assert a.with_replicas(5).n_replicas == 5


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_product_matches_pointwise_product(data):
    n_sites = data.draw(st.integers(2, 4))
    n_rep = data.draw(st.integers(1, 3))
    site_lists = st.lists(st.integers(0, n_sites - 1), max_size=4)
    fns = []
    for _ in range(2):
        parts = {
            r: data.draw(site_lists) for r in range(1, n_rep + 1)
        }
        fns.append(ReplicaFunctional.monomial(parts, n_rep))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**16)))
    replicas = [rng.choice([-1.0, 1.0], size=n_sites) for _ in range(n_rep)]
    prod = fns[0] * fns[1]
    want = fns[0].evaluate_on(replicas) * fns[1].evaluate_on(replicas)
    assert prod.evaluate_on(replicas) == pytest.approx(want, abs=1e-12)


# -- overlap functionals ------------------------------------------------------


def test_overlap_power_pointwise():
    n = 4
    fn = overlap_power(1, 2, 2, n)
    rng = np.random.default_rng(3)
    s, t = (rng.choice([-1.0, 1.0], size=n) for _ in range(2))
    want = (float(s @ t) / n) ** 2
    assert fn.evaluate_on([s, t]) == pytest.approx(want, abs=1e-12)


def test_overlap_square_has_diagonal_constant():
    n = 5
    fn = overlap_power(1, 2, 2, n)
    # tuples (i, i) parity-cancel into the empty key, n of them at 1/n**2
    assert fn.terms[()] == pytest.approx(1.0 / n)


def test_overlap_power_validation():
    with pytest.raises(ValueError):
        overlap_power(1, 1, 2, 3)
    with pytest.raises(ValueError):
        overlap_power(1, 2, 0, 3)


def test_multi_overlap_pointwise():
    n = 3
    fn = multi_overlap((1, 2, 3), 2, n)
    rng = np.random.default_rng(9)
    reps = [rng.choice([-1.0, 1.0], size=n) for _ in range(3)]
    want = (sum(reps[0][i] * reps[1][i] * reps[2][i] for i in range(n)) / n) ** 2
    assert fn.evaluate_on(reps) == pytest.approx(want, abs=1e-12)


def test_multi_overlap_validation():
    with pytest.raises(ValueError):
        multi_overlap((1, 1), 1, 3)
    with pytest.raises(ValueError):
        multi_overlap((1, 2), 3, 3)


def test_replica_difference_shifts_labels():
    fn = ReplicaFunctional.monomial({1: (0,)}, 1)
    diff = replica_difference(fn, 1)
    assert diff.n_replicas == 2
    assert diff.terms == {((1, 1),): 1.0, ((2, 1),): -1.0}
    with pytest.raises(ValueError):
        replica_difference(fn, 2)


def test_replica_difference_kills_exchangeable_means():
    oracle = small_oracle(4, seed=5)
    fn = overlap_power(1, 2, 2, 4)
    diff = replica_difference(fn, 1)
    # label permutations cannot change a product of i.i.d. replica moments
    assert replica_expectation(oracle, diff) == pytest.approx(0.0, abs=1e-15)


# -- oracle basics ------------------------------------------------------------


def test_oracle_free_spins_is_uniform():
    spec = ModelSpec(4, {}, 0.0)
    oracle = build_oracle(spec, CouplingAssignment({}))
    assert np.allclose(oracle.weights, 1.0 / 16)
    assert oracle.log_z == pytest.approx(4 * math.log(2.0), rel=1e-14)
    assert oracle.free_energy_density == pytest.approx(math.log(2.0), rel=1e-14)


def test_oracle_field_only_moments():
    h = 0.7
    spec = ModelSpec(3, {}, h)
    oracle = build_oracle(spec, CouplingAssignment({}))
    assert oracle.moment(0b001) == pytest.approx(math.tanh(h), abs=1e-14)
    assert oracle.moment(0b110) == pytest.approx(math.tanh(h) ** 2, abs=1e-14)
    assert oracle.log_z == pytest.approx(3 * math.log(2 * math.cosh(h)), rel=1e-14)


def test_oracle_moment_matches_direct_sum():
    oracle = small_oracle(4, seed=1, betas={2: 0.6, 3: 0.4})
    for mask in (0b1, 0b1010, 0b1111):
        direct = float(oracle.weights @ np.prod(
            [oracle.configs[:, s] for s in mask_to_sites(mask)], axis=0))
        assert oracle.moment(mask) == pytest.approx(direct, abs=1e-14)


def test_pair_moment_matrix_entries():
    oracle = small_oracle(3, seed=2)
    for mask in (0, 0b100):
        mat = oracle.pair_moment_matrix(mask)
        for u in range(3):
            for v in range(3):
                want = oracle.moment(sites_to_mask((u, v)) ^ mask)
                assert mat[u, v] == pytest.approx(want, abs=1e-12)


def test_oracle_rejects_oversize_and_bad_shape():
    with pytest.raises(ResourceCapError):
        GibbsOracle(21, np.zeros(4))
    with pytest.raises(ModelValidationError):
        GibbsOracle(3, np.zeros(4))


# -- transforms and overlap fast paths ----------------------------------------


def test_fwht_involution():
    rng = np.random.default_rng(0)
    x = rng.normal(size=16)
    assert np.allclose(fwht(fwht(x)), 16 * x, atol=1e-12)


def test_xor_convolve_matches_naive():
    rng = np.random.default_rng(1)
    w = rng.normal(size=8)
    k = rng.normal(size=8)
    got = xor_convolve(w, k)
    want = np.array([sum(w[d] * k[c ^ d] for d in range(8)) for c in range(8)])
    assert np.allclose(got, want, atol=1e-12)
    with pytest.raises(ValueError):
        xor_convolve(w, k[:4])


@pytest.mark.parametrize("power", [1, 2, 3])
def test_overlap_power_moment_routes_agree(power):
    oracle = small_oracle(3, seed=4)
    fn = overlap_power(1, 2, power, 3)
    fact = replica_expectation(oracle, fn)
    fast = oracle.overlap_power_moment(power)
    brute = naive_replica_expectation(oracle, fn)
    assert fast == pytest.approx(fact, abs=1e-12)
    assert brute == pytest.approx(fact, abs=1e-10)


def test_star_expectation_matches_factorized():
    oracle = small_oracle(3, seed=6)
    fn = overlap_power(1, 2, 2, 3, 3) * overlap_power(1, 3, 1, 3, 3)
    want = replica_expectation(oracle, fn)
    got = oracle.star_overlap_expectation([2, 1])
    assert got == pytest.approx(want, abs=1e-12)


def test_overlap_product_merges_and_factorizes():
    oracle = small_oracle(3, seed=7)
    doubled = overlap_product_expectation(oracle, [(1, 2, 1), (2, 1, 1)])
    assert doubled == pytest.approx(oracle.overlap_power_moment(2), abs=1e-12)
    split = overlap_product_expectation(oracle, [(1, 2, 1), (3, 4, 1)])
    want = oracle.overlap_power_moment(1) ** 2
    assert split == pytest.approx(want, abs=1e-12)
    assert overlap_product_expectation(oracle, []) == 1.0
    with pytest.raises(ValueError):
        overlap_product_expectation(oracle, [(1, 1, 2)])


def test_overlap_triangle_falls_back_to_generic():
    oracle = small_oracle(3, seed=8)
    edges = [(1, 2, 1), (2, 3, 1), (1, 3, 1)]
    got = overlap_product_expectation(oracle, edges)

    def triangle(reps):
        r12 = float(reps[0] @ reps[1]) / 3
        r23 = float(reps[1] @ reps[2]) / 3
        r13 = float(reps[0] @ reps[2]) / 3
        return r12 * r23 * r13

    want = naive_replica_expectation(oracle, triangle, n_replicas=3)
    assert got == pytest.approx(want, abs=1e-10)


def test_overlap_distribution_consistency():
    oracle = small_oracle(4, seed=9)
    values, probs = oracle.overlap_distribution()
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(probs >= -1e-14)
    assert values[0] == 1.0 and values[-1] == -1.0
    second = float((values ** 2) @ probs)
    assert second == pytest.approx(oracle.overlap_power_moment(2), abs=1e-12)


def test_naive_expectation_caps_and_callable_route():
    oracle = small_oracle(3, seed=10)
    with pytest.raises(ResourceCapError):
        naive_replica_expectation(oracle, ReplicaFunctional.one(6), max_bits=16)
    with pytest.raises(ValueError):
        naive_replica_expectation(oracle, lambda reps: 1.0)
    fn = overlap_power(1, 2, 1, 3)
    as_callable = naive_replica_expectation(
        oracle, lambda reps: float(reps[0] @ reps[1]) / 3, n_replicas=2)
    assert as_callable == pytest.approx(naive_replica_expectation(oracle, fn), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16), power=st.integers(1, 3))
def test_overlap_moments_bounded(seed, power):
    oracle = small_oracle(3, seed=seed, betas={2: 1.0}, field=0.3)
    value = oracle.overlap_power_moment(power)
    assert -1.0 - 1e-12 <= value <= 1.0 + 1e-12


# -- chain sampling -----------------------------------------------------------


def test_metropolis_config_validation():
    with pytest.raises(ModelValidationError):
        MetropolisConfig(0)
    with pytest.raises(ModelValidationError):
        MetropolisConfig(5, burn_in=-1)
    with pytest.raises(ModelValidationError):
        MetropolisConfig(5, thinning=0)


def test_detailed_balance_is_exact():
    rng = np.random.default_rng(11)
    spec = ModelSpec(4, {2: 0.9, 3: 0.5}, 0.2)
    couplings = random_assignment(spec, rng)
    assert detailed_balance_residual(spec, couplings, rng) <= 1e-12


def test_chain_accepts_everything_at_zero_energy():
    spec = ModelSpec(4, {2: 0.0}, 0.0)
    couplings = CouplingAssignment({2: np.zeros((4, 4))})
    rng = np.random.default_rng(12)
    samples, info = metropolis_chain(spec, couplings, MetropolisConfig(50, burn_in=10), rng)
    assert info["acceptance"] == 1.0
    assert samples.shape == (50, 4)
    assert set(np.unique(samples)) <= {-1, 1}


def test_chain_incremental_energy_tracks_full():
    rng = np.random.default_rng(13)
    spec = ModelSpec(4, {2: 0.8, 3: 0.4}, 0.3)
    couplings = random_assignment(spec, rng)
    _, info = metropolis_chain(spec, couplings, MetropolisConfig(30, burn_in=20), rng)
    assert info["max_drift"] <= 1e-8


def test_chain_marginal_matches_exact():
    rng = np.random.default_rng(14)
    spec = ModelSpec(4, {2: 0.7}, 0.4)
    couplings = random_assignment(spec, rng)
    oracle = build_oracle(spec, couplings)
    exact = np.array([oracle.moment(1 << s) for s in range(4)])
    samples, _ = metropolis_chain(
        spec, couplings, MetropolisConfig(4000, burn_in=200), rng)
    got = samples.mean(axis=0)
    # correlated sweeps; allow a generous band around the i.i.d. error scale
    assert np.all(np.abs(got - exact) < 0.1)


# -- free energy --------------------------------------------------------------


def test_free_energy_exact_closed_forms():
    spec = ModelSpec(5, {}, 0.9)
    value, err = free_energy_density(spec, CouplingAssignment({}))
    assert err == 0.0
    assert value == pytest.approx(math.log(2 * math.cosh(0.9)), rel=1e-13)


def test_free_energy_chain_near_exact():
    rng = np.random.default_rng(15)
    spec = ModelSpec(4, {2: 0.6}, 0.3)
    couplings = random_assignment(spec, rng)
    exact, _ = free_energy_density(spec, couplings)
    approx, stderr = free_energy_density(
        spec, couplings, method="chain",
        chain_config=MetropolisConfig(400, burn_in=100), rng=rng, n_grid=11)
    assert stderr > 0.0
    # trapezoid bias plus chain noise; this is a smoke bound, not a tolerance
    assert abs(approx - exact) < 0.05


def test_free_energy_method_validation():
    spec = ModelSpec(3, {}, 0.1)
    with pytest.raises(ModelValidationError):
        free_energy_density(spec, CouplingAssignment({}), method="bogus")
    with pytest.raises(ModelValidationError):
        free_energy_density(spec, CouplingAssignment({}), method="chain")
