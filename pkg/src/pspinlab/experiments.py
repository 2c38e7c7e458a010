"""Estimator experiments built on the exact oracle.

Every experiment follows one pattern: a replicate index is mapped through a
seed path to its own counter-based stream, the per-replicate quantity is an
exact thermal computation on a freshly drawn disorder realization, and the
Monte Carlo part is only the average over realizations.  Reductions use
exact summation (math.fsum), so results do not depend on reduction order or
on the worker count.
"""

from __future__ import annotations

import functools
import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import disorder as dis
from .disorder import DisorderSpec, SeedPath, experiment_id, sample_couplings, sample_vb
from .expansion import derivative_power_tuple_sum, signed_basis
from .gibbs import (
    GibbsOracle,
    ReplicaFunctional,
    build_oracle,
    overlap_power,
    overlap_product_expectation,
    replica_difference,
    sites_to_mask,
)
from .model import (
    EXACT_ENUMERATION_CAP,
    CouplingAssignment,
    ModelSpec,
    ResourceCapError,
    interpolated_couplings,
    spin_matrix,
    tuple_sum_batch,
)


class ExperimentError(ValueError):
    """Raised for invalid experiment parameters."""


@dataclass(frozen=True)
class EstimatorResult:
    """One scalar estimate with its uncertainty and provenance."""

    experiment: str
    value: float
    std_error: float
    replicates: int
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TestFunction:
    """A bounded replica functional from the standard test family.

    kinds:
        "one": the constant functional.
        "overlap-power": R_{1,2}**power (range within [0, 1] for even powers).
        "spin-monomial": prod_l prod_{j in sites[l]} sigma_j^l with 0-based
            sites, at most two sites per replica in the standard suite.
    """

    kind: str
    power: int = 2
    sites: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        if self.kind not in ("one", "overlap-power", "spin-monomial"):
            raise ExperimentError(f"unknown test-function kind {self.kind!r}")
        if self.kind == "overlap-power" and self.power < 1:
            raise ExperimentError(f"overlap power must be >= 1, got {self.power}")

    @property
    def min_replicas(self) -> int:
        if self.kind == "one":
            return 1
        if self.kind == "overlap-power":
            return 2
        return len(self.sites)

    @property
    def label(self) -> str:
        if self.kind == "one":
            return "one"
        if self.kind == "overlap-power":
            return f"overlap^{self.power}"
        inner = ";".join(",".join(str(s) for s in block) for block in self.sites)
        return f"monomial[{inner}]"

    def functional(self, n_sites: int, n_replicas: int) -> ReplicaFunctional:
        if n_replicas < self.min_replicas:
            raise ExperimentError(
                f"{self.label} needs at least {self.min_replicas} replicas, got {n_replicas}"
            )
        if self.kind == "one":
            return ReplicaFunctional.one(n_replicas)
        if self.kind == "overlap-power":
            return overlap_power(1, 2, self.power, n_sites, n_replicas)
        for block in self.sites:
            for s in block:
                if not 0 <= s < n_sites:
                    raise ExperimentError(f"site {s} out of range for N={n_sites}")
        return ReplicaFunctional.monomial(
            {l + 1: block for l, block in enumerate(self.sites)}, n_replicas)

    def overlap_edges(self):
        """Edge list for the overlap fast path, or None for monomials."""
        if self.kind == "one":
            return []
        if self.kind == "overlap-power":
            return [(1, 2, self.power)]
        return None

    def fixed_masks(self) -> dict[int, int]:
        """Per-replica parity masks (spin monomials only)."""
        if self.kind != "spin-monomial":
            raise ExperimentError("fixed masks only exist for spin monomials")
        out = {}
        for l, block in enumerate(self.sites):
            mask = sites_to_mask(block)
            if mask:
                out[l + 1] = mask
        return out


def constant_one() -> TestFunction:
    return TestFunction("one")


def overlap_square() -> TestFunction:
    return TestFunction("overlap-power", power=2)


def spin_monomial(sites) -> TestFunction:
    return TestFunction("spin-monomial", sites=tuple(tuple(int(s) for s in b) for b in sites))


def default_suite(n_sites: int) -> list[TestFunction]:
    out = [constant_one(), overlap_square(), spin_monomial(((0,), (1,)))]
    if n_sites >= 3:
        out.append(spin_monomial(((0, 1), (2,))))
    return out


# -- reductions and replicate mapping ---------------------------------------


def mean_stderr(values) -> tuple[float, float]:
    values = list(values)
    m = len(values)
    mean = math.fsum(values) / m
    if m < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (m - 1)
    return mean, math.sqrt(var / m)


def resolve_workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("PSPINLAB_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _map_replicates(fn, count: int, workers: int | None):
    """Apply fn to 0..count-1, in index order regardless of scheduling."""
    n_workers = resolve_workers(workers)
    if n_workers <= 1 or count < 4:
        return [fn(r) for r in range(count)]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        chunk = max(1, count // (n_workers * 8))
        return list(pool.map(fn, range(count), chunksize=chunk))


def _draw_oracle(mspec: ModelSpec, law: DisorderSpec, path: SeedPath) -> GibbsOracle:
    rng = path.generator()
    return build_oracle(mspec, sample_couplings(mspec, law, rng))


# -- replica-coupling gaps ---------------------------------------------------


def _f_expectation(oracle: GibbsOracle, fn: TestFunction, n: int) -> float:
    edges = fn.overlap_edges()
    if edges is not None:
        return overlap_product_expectation(oracle, edges)
    return fn.functional(oracle.n_sites, n).evaluate(oracle)


def _coupled_expectation(oracle: GibbsOracle, fn: TestFunction, n: int,
                         leaf: int, power: int) -> float:
    """<R_{1,leaf}**power * F> through the fastest applicable route."""
    edges = fn.overlap_edges()
    if edges is not None:
        return overlap_product_expectation(oracle, edges + [(1, leaf, power)])
    base = fn.functional(oracle.n_sites, max(n, leaf))
    coupled = overlap_power(1, leaf, power, oracle.n_sites, max(n, leaf)) * base
    return coupled.evaluate(oracle)


def gg_gap_realization(oracle: GibbsOracle, oracle_indep: GibbsOracle, n: int, p: int,
                       fn: TestFunction) -> float:
    """One-realization value of the replica-coupling gap.

    <R_{1,n+1}^p F> - (1/n) <R_{1,2}^p>' <F> - (1/n) sum_{l=2..n} <R_{1,l}^p F>,
    where the primed average may come from an independent realization.  With
    oracle_indep is oracle and F constant the value cancels identically.
    """
    if n < 2:
        raise ExperimentError(f"the gap needs n >= 2 replicas, got {n}")
    lead = _coupled_expectation(oracle, fn, n, n + 1, p)
    boundary = oracle_indep.overlap_power_moment(p) * _f_expectation(oracle, fn, n)
    inner = math.fsum(_coupled_expectation(oracle, fn, n, l, p) for l in range(2, n + 1))
    return lead - boundary / n - inner / n


def _gg_gap_replicate(mspec: ModelSpec, law: DisorderSpec, n: int, p: int,
                      fn: TestFunction, exp_id: int, r: int) -> float:
    main = _draw_oracle(mspec, law, SeedPath(exp_id, r, 0))
    indep = _draw_oracle(mspec, law, SeedPath(exp_id, r, 1))
    return gg_gap_realization(main, indep, n, p, fn)


def gg_gap(mspec: ModelSpec, law: DisorderSpec, n: int, p: int, fn: TestFunction,
           replicates: int, seed: int, workers: int | None = 1) -> EstimatorResult:
    """Disorder average of the replica-coupling gap; the product term uses an
    independent realization per replicate so it is unbiased for E<R^p> E<F>."""
    exp_id = experiment_id(seed, "gg-gap")
    worker = functools.partial(_gg_gap_replicate, mspec, law, n, p, fn, exp_id)
    values = _map_replicates(worker, replicates, workers)
    value, err = mean_stderr(values)
    return EstimatorResult("gg-gap", value, err, replicates,
                           {"N": mspec.n_sites, "n": n, "p": p, "F": fn.label, "seed": seed})


def gg_thermal_gap_realization(oracle: GibbsOracle, n: int, p: int, fn: TestFunction) -> float:
    """Purely thermal coupling combination; vanishes identically for F = 1.

    2 sum_{l<l'<=n} <R_{l,l'}^p F> - 2n sum_{l<=n} <R_{l,n+1}^p F>
    + n(n+1) <R_{n+1,n+2}^p F>.
    """
    if n < 1:
        raise ExperimentError(f"need n >= 1 replicas, got {n}")
    edges = fn.overlap_edges()

    def coupled(a: int, b: int) -> float:
        if edges is not None:
            return overlap_product_expectation(oracle, edges + [(a, b, p)])
        top = max(n, b, fn.min_replicas)
        mixed = overlap_power(a, b, p, oracle.n_sites, top) * fn.functional(oracle.n_sites, top)
        return mixed.evaluate(oracle)

    first = math.fsum(coupled(a, b) for a, b in itertools.combinations(range(1, n + 1), 2))
    second = math.fsum(coupled(l, n + 1) for l in range(1, n + 1))
    third = coupled(n + 1, n + 2)
    return 2.0 * first - 2.0 * n * second + n * (n + 1) * third


def _gg_thermal_replicate(mspec: ModelSpec, law: DisorderSpec, n: int, p: int,
                          fn: TestFunction, exp_id: int, r: int) -> float:
    oracle = _draw_oracle(mspec, law, SeedPath(exp_id, r, 0))
    return gg_thermal_gap_realization(oracle, n, p, fn)


def gg_thermal_gap(mspec: ModelSpec, law: DisorderSpec, n: int, p: int, fn: TestFunction,
                   replicates: int, seed: int, workers: int | None = 1) -> EstimatorResult:
    exp_id = experiment_id(seed, "gg-thermal-gap")
    worker = functools.partial(_gg_thermal_replicate, mspec, law, n, p, fn, exp_id)
    values = _map_replicates(worker, replicates, workers)
    value, err = mean_stderr(values)
    return EstimatorResult("gg-thermal-gap", value, err, replicates,
                           {"N": mspec.n_sites, "n": n, "p": p, "F": fn.label, "seed": seed})


# -- self-averaging ----------------------------------------------------------


def _interaction_values(mspec: ModelSpec, couplings: CouplingAssignment, oracle: GibbsOracle,
                        p: int) -> np.ndarray:
    return (mspec.betas[p] * mspec.scale(p)
            * tuple_sum_batch(couplings.tables[p], oracle.configs))


def _self_avg_thermal_replicate(mspec: ModelSpec, law: DisorderSpec, p: int,
                                exp_id: int, r: int) -> float:
    rng = SeedPath(exp_id, r, 0).generator()
    couplings = sample_couplings(mspec, law, rng)
    oracle = build_oracle(mspec, couplings)
    values = _interaction_values(mspec, couplings, oracle, p)
    mean = oracle.thermal_mean(values)
    return (oracle.thermal_mean(values ** 2) - mean ** 2) / mspec.n_sites ** 2


def _self_avg_center_replicate(mspec: ModelSpec, law: DisorderSpec, p: int,
                               exp_id: int, r: int) -> float:
    rng = SeedPath(exp_id, r, 1).generator()
    couplings = sample_couplings(mspec, law, rng)
    oracle = build_oracle(mspec, couplings)
    return oracle.thermal_mean(_interaction_values(mspec, couplings, oracle, p))


def _self_avg_full_replicate(mspec: ModelSpec, law: DisorderSpec, p: int, center: float,
                             exp_id: int, r: int) -> float:
    rng = SeedPath(exp_id, r, 0).generator()
    couplings = sample_couplings(mspec, law, rng)
    oracle = build_oracle(mspec, couplings)
    values = _interaction_values(mspec, couplings, oracle, p)
    return oracle.thermal_mean(np.abs(values - center)) / mspec.n_sites


def self_averaging(mspec: ModelSpec, law: DisorderSpec, p: int, replicates: int, seed: int,
                   mode: str = "thermal", workers: int | None = 1) -> EstimatorResult:
    """Concentration of the order-p interaction energy.

    mode "thermal": (1/N**2) E[<H_p**2> - <H_p>**2].  mode "full":
    (1/N) E<|H_p - c|> with the centering c estimated from an independent
    replicate batch first.
    """
    if p not in mspec.betas:
        raise ExperimentError(f"model has no order-{p} interaction")
    exp_id = experiment_id(seed, f"self-averaging-{mode}")
    if mode == "thermal":
        worker = functools.partial(_self_avg_thermal_replicate, mspec, law, p, exp_id)
        values = _map_replicates(worker, replicates, workers)
    elif mode == "full":
        centers = _map_replicates(
            functools.partial(_self_avg_center_replicate, mspec, law, p, exp_id),
            replicates, workers)
        center = math.fsum(centers) / len(centers)
        worker = functools.partial(_self_avg_full_replicate, mspec, law, p, center, exp_id)
        values = _map_replicates(worker, replicates, workers)
    else:
        raise ExperimentError(f"unknown self-averaging mode {mode!r}")
    value, err = mean_stderr(values)
    return EstimatorResult(f"self-averaging-{mode}", value, err, replicates,
                           {"N": mspec.n_sites, "p": p, "seed": seed})


# -- universality and interpolation -----------------------------------------


def _plain_f_replicate(mspec: ModelSpec, law: DisorderSpec, fn: TestFunction, n: int,
                       exp_id: int, stream: int, r: int) -> float:
    oracle = _draw_oracle(mspec, law, SeedPath(exp_id, r, stream))
    return _f_expectation(oracle, fn, n)


def universality_gap(mspec: ModelSpec, law_a: DisorderSpec, law_b: DisorderSpec,
                     fn: TestFunction, replicates: int, seed: int,
                     workers: int | None = 1) -> EstimatorResult:
    """|E<F>_A - E<F>_B| across two disorder families, independent batches.

    No common random numbers: the laws differ, so pairing would be fiction.
    """
    n = max(2, fn.min_replicas)
    exp_id = experiment_id(seed, "universality-gap")
    va = _map_replicates(functools.partial(_plain_f_replicate, mspec, law_a, fn, n, exp_id, 0),
                         replicates, workers)
    vb = _map_replicates(functools.partial(_plain_f_replicate, mspec, law_b, fn, n, exp_id, 1),
                         replicates, workers)
    mean_a, err_a = mean_stderr(va)
    mean_b, err_b = mean_stderr(vb)
    return EstimatorResult("universality-gap", abs(mean_a - mean_b),
                           math.sqrt(err_a ** 2 + err_b ** 2), replicates,
                           {"N": mspec.n_sites, "F": fn.label,
                            "family_a": law_a.family, "family_b": law_b.family,
                            "mean_a": mean_a, "mean_b": mean_b, "seed": seed})


def _sweep_replicate(mspec: ModelSpec, law: DisorderSpec, t_grid: tuple[float, ...],
                     fn: TestFunction, n: int, exp_id: int, r: int) -> tuple:
    rng_xi = SeedPath(exp_id, r, 0).generator()
    rng_g = SeedPath(exp_id, r, 1).generator()
    xi = sample_couplings(mspec, law, rng_xi)
    gauss = sample_couplings(mspec, dis.gaussian(), rng_g)
    out = []
    for t in t_grid:
        oracle = build_oracle(mspec, interpolated_couplings(xi, gauss, t))
        out.append(_f_expectation(oracle, fn, n))
    return tuple(out)


def interpolation_sweep(mspec: ModelSpec, law: DisorderSpec, t_grid, fn: TestFunction,
                        replicates: int, seed: int,
                        workers: int | None = 1) -> list[EstimatorResult]:
    """E<F> along sqrt(t) xi + sqrt(1-t) g with common (xi, g) per replicate.

    t = 1 is the pure non-Gaussian draw, t = 0 the pure Gaussian one; sharing
    the pair across the grid makes the curve smooth in t.
    """
    t_grid = tuple(float(t) for t in t_grid)
    for t in t_grid:
        if not 0.0 <= t <= 1.0:
            raise ExperimentError(f"interpolation points must lie in [0, 1], got {t}")
    n = max(2, fn.min_replicas)
    exp_id = experiment_id(seed, "interpolation-sweep")
    worker = functools.partial(_sweep_replicate, mspec, law, t_grid, fn, n, exp_id)
    rows = _map_replicates(worker, replicates, workers)
    results = []
    for k, t in enumerate(t_grid):
        value, err = mean_stderr([row[k] for row in rows])
        results.append(EstimatorResult("interpolation-sweep", value, err, replicates,
                                       {"N": mspec.n_sites, "t": t, "F": fn.label,
                                        "family": law.family, "seed": seed}))
    return results


# -- cavity identity ---------------------------------------------------------


def cavity_identity_realization(mspec: ModelSpec, law: DisorderSpec, n_cavity: int,
                                cavity_sets, path: SeedPath) -> dict[str, float]:
    """Exact two-route check of the cavity-field representation, one draw.

    The full system has N + n' sites; its Hamiltonian at the Gaussian end of
    the cavity interpolation is bulk interactions over the N bulk sites plus
    independent Gaussian linear fields seen by each cavity spin, all with the
    full-system normalization, plus the external field everywhere.  Cavity
    marginals <prod_{j in C} eps_j> are then computed once by enumerating the
    joint system and once by the tanh/cosh reweighting of the bulk system,
    and must agree to rounding.
    """
    n_full = mspec.n_sites
    n_bulk = n_full - n_cavity
    if n_bulk < 1:
        raise ExperimentError("cavity check needs at least one bulk site")
    if n_full > EXACT_ENUMERATION_CAP:
        raise ResourceCapError(
            f"joint enumeration needs 2**{n_full} states, beyond the cap of "
            f"2**{EXACT_ENUMERATION_CAP}"
        )
    for block in cavity_sets:
        for j in block:
            if not 0 <= j < n_cavity:
                raise ExperimentError(f"cavity site {j} outside 0..{n_cavity - 1}")
    configs = spin_matrix(n_bulk)
    rng_bulk = path.child(stream=0).generator()
    rng_field = path.child(stream=1).generator()
    h = mspec.field_h
    bulk_energy = h * configs.sum(axis=1)
    cavity_fields = np.zeros((n_cavity, configs.shape[0]))
    for p in mspec.orders:
        coef = mspec.betas[p] * mspec.scale(p)  # full-system N + n' scale
        bulk_table = law.sample(rng_bulk, (n_bulk,) * p)
        bulk_energy = bulk_energy + coef * tuple_sum_batch(bulk_table, configs)
        slots = rng_field.standard_normal((n_cavity, p) + (n_bulk,) * (p - 1))
        for j in range(n_cavity):
            eff = slots[j].sum(axis=0)
            if p == 2:
                cavity_fields[j] += coef * (configs @ eff)
            else:
                cavity_fields[j] += coef * tuple_sum_batch(eff, configs)

    # joint enumeration over (eps, sigma)
    shifted = cavity_fields + h
    eps_matrix = spin_matrix(n_cavity)
    joint_log = bulk_energy[None, :] + eps_matrix @ shifted
    shift = joint_log.max()
    joint_w = np.exp(joint_log - shift)
    joint_z = joint_w.sum()

    # bulk reweighting route
    log_w = bulk_energy + np.logaddexp(shifted, -shifted).sum(axis=0)  # log prod 2cosh
    peak = log_w.max()
    bulk_w = np.exp(log_w - peak)
    den = bulk_w.sum()

    worst = 0.0
    prod_lhs = 1.0
    prod_rhs = 1.0
    tanh_fields = np.tanh(shifted)
    for block in cavity_sets:
        eps_prod = np.ones(1 << n_cavity)
        for j in block:
            eps_prod = eps_prod * eps_matrix[:, j]
        lhs = float((eps_prod[:, None] * joint_w).sum() / joint_z)
        factor = np.ones(configs.shape[0])
        for j in block:
            factor = factor * tanh_fields[j]
        rhs = float((bulk_w * factor).sum() / den)
        worst = max(worst, abs(lhs - rhs))
        prod_lhs *= lhs
        prod_rhs *= rhs
    return {"max_factor_residual": worst, "product_residual": abs(prod_lhs - prod_rhs)}


def cavity_identity_check(mspec: ModelSpec, law: DisorderSpec, n_cavity: int, cavity_sets,
                          realizations: int, seed: int) -> dict[str, float]:
    """Worst residuals of the cavity identity over many realizations."""
    exp_id = experiment_id(seed, "cavity-identity")
    worst = {"max_factor_residual": 0.0, "product_residual": 0.0}
    for r in range(realizations):
        got = cavity_identity_realization(mspec, law, n_cavity, cavity_sets,
                                          SeedPath(exp_id, r, 0))
        for key in worst:
            worst[key] = max(worst[key], got[key])
    return worst


# -- derivative moment sums --------------------------------------------------


def multioverlap_sq_expectation(oracle: GibbsOracle, labels, fixed: dict[int, int]) -> float:
    """<R_{labels}**2 * prod fixed monomials> through pair-moment matrices.

    ``fixed`` maps replica labels to parity masks of site monomials
    multiplying the overlap; replicas in ``labels`` absorb their mask into
    the pair-moment matrix, the rest contribute scalar moments.
    """
    labels = set(labels)
    n_sites = oracle.n_sites
    matrix = None
    for l in sorted(labels):
        p_mat = oracle.pair_moment_matrix(fixed.get(l, 0))
        matrix = p_mat.copy() if matrix is None else matrix * p_mat
    scalar = 1.0
    for l, mask in fixed.items():
        if l not in labels:
            scalar *= oracle.moment(mask)
    if matrix is None:
        return scalar
    return scalar * float(matrix.sum()) / n_sites ** 2


def derivative_sum_realization(oracle: GibbsOracle, n: int, m: int,
                               fn: TestFunction) -> float:
    """N**-2 sum over site pairs of <(derivative factor)**m F>, one draw,
    evaluated through the squared-multi-overlap reformulation."""
    if fn.kind == "one":
        fixed: dict[int, int] = {}
    elif fn.kind == "spin-monomial":
        fixed = fn.fixed_masks()
    else:
        raise ExperimentError("derivative sums support constant or monomial F only")
    table = derivative_power_tuple_sum(m, n)
    total = 0.0
    for labels, coeff in sorted(table.items(), key=lambda kv: sorted(kv[0])):
        total += coeff * multioverlap_sq_expectation(oracle, labels, fixed)
    return total


def _derivative_sum_replicate(mspec: ModelSpec, law: DisorderSpec, n: int, m: int,
                              fn: TestFunction, exp_id: int, r: int) -> float:
    oracle = _draw_oracle(mspec, law, SeedPath(exp_id, r, 0))
    return derivative_sum_realization(oracle, n, m, fn)


def derivative_moment_sum(mspec: ModelSpec, law: DisorderSpec, n: int, m: int,
                          fn: TestFunction, replicates: int, seed: int,
                          workers: int | None = 1) -> EstimatorResult:
    """Disorder average of the tuple-summed m-th derivative of <F>."""
    exp_id = experiment_id(seed, f"derivative-moment-sum-m{m}")
    worker = functools.partial(_derivative_sum_replicate, mspec, law, n, m, fn, exp_id)
    values = _map_replicates(worker, replicates, workers)
    value, err = mean_stderr(values)
    return EstimatorResult("derivative-moment-sum", value, err, replicates,
                           {"N": mspec.n_sites, "n": n, "m": m, "F": fn.label, "seed": seed})


# -- free energy fluctuation -------------------------------------------------


def _fe_replicate(mspec: ModelSpec, law: DisorderSpec, exp_id: int, r: int) -> float:
    oracle = _draw_oracle(mspec, law, SeedPath(exp_id, r, 0))
    return oracle.free_energy_density


def free_energy_fluctuation(mspec: ModelSpec, law: DisorderSpec, replicates: int, seed: int,
                            workers: int | None = 1) -> EstimatorResult:
    """Sample variance of the free energy density across disorder draws.

    The standard error of the variance uses the distribution-free fourth
    central moment formula."""
    exp_id = experiment_id(seed, "free-energy-fluctuation")
    worker = functools.partial(_fe_replicate, mspec, law, exp_id)
    values = _map_replicates(worker, replicates, workers)
    m = len(values)
    mean = math.fsum(values) / m
    var = math.fsum((v - mean) ** 2 for v in values) / (m - 1)
    m4 = math.fsum((v - mean) ** 4 for v in values) / m
    err = math.sqrt(max(0.0, m4 - var ** 2) / m)
    return EstimatorResult("free-energy-fluctuation", var, err, replicates,
                           {"N": mspec.n_sites, "seed": seed})


# -- diluted pair interactions ----------------------------------------------


def _vb_replicate(mspec: ModelSpec, law: DisorderSpec, alpha: float, beta_prime: float,
                  j_law: DisorderSpec, exp_id: int, r: int) -> float:
    rng_coup = SeedPath(exp_id, r, 0).generator()
    rng_vb = SeedPath(exp_id, r, 1).generator()
    couplings = sample_couplings(mspec, law, rng_coup)
    vb = sample_vb(alpha, mspec.n_sites, beta_prime, rng_vb, j_law)
    base = build_oracle(mspec, couplings)
    dressed = build_oracle(mspec, couplings, vb=vb)
    return (dressed.log_z - base.log_z) / (alpha * mspec.n_sites)


def vb_logz_increment(mspec: ModelSpec, law: DisorderSpec, alpha: float, beta_prime: float,
                      replicates: int, seed: int, j_law: DisorderSpec | None = None,
                      workers: int | None = 1) -> EstimatorResult:
    """Per-edge log-partition gain from adding the diluted interaction.

    The population value lies in [0, beta'] for centered bounded edge
    couplings with |J| <= 1.
    """
    if alpha <= 0:
        raise ExperimentError(f"alpha must be positive, got {alpha}")
    j_law = j_law if j_law is not None else dis.rademacher()
    exp_id = experiment_id(seed, "vb-logz-increment")
    worker = functools.partial(_vb_replicate, mspec, law, alpha, beta_prime, j_law, exp_id)
    values = _map_replicates(worker, replicates, workers)
    value, err = mean_stderr(values)
    return EstimatorResult("vb-logz-increment", value, err, replicates,
                           {"N": mspec.n_sites, "alpha": alpha, "beta_prime": beta_prime,
                            "seed": seed})


def _pair_weighted_matrix(oracle: GibbsOracle, fn: ReplicaFunctional, k_labels) -> np.ndarray:
    """Matrix over (u, v) of <sigma_u sigma_v on replicas in K times F>.

    Entry (u, v) is the factorized expectation with the pair monomial
    inserted into every replica of ``k_labels`` (absorbing that replica's
    mask in F) and plain moments elsewhere.
    """
    k_labels = set(k_labels)
    n = oracle.n_sites
    out = np.zeros((n, n))
    for key, coeff in fn.terms.items():
        masks = dict(key)
        block = np.full((n, n), coeff)
        for l in k_labels:
            block = block * oracle.pair_moment_matrix(masks.pop(l, 0))
        for mask in masks.values():
            block = block * oracle.moment(mask)
        out += block
    return out


def poisson_ibp_realization(oracle: GibbsOracle, vb, alpha: float, beta_prime: float,
                            n: int, fn: TestFunction,
                            j_law: DisorderSpec) -> tuple[float, float]:
    """Both sides of the Poisson integration-by-parts identity, one draw.

    Left: <H'(sigma^1) Delta_1 F> / (alpha N beta').  Right: the fresh-edge
    average with the tilted replica product, evaluated exactly over the edge
    law and the uniform endpoint pair.  The two sides agree in expectation
    over (disorder, dilution) only, so they are returned separately.
    """
    n_sites = oracle.n_sites
    base = fn.functional(n_sites, n)
    delta = replica_difference(base, 1)
    # left side: sum_k J_k * W[u_k, v_k] with W the per-edge coupling matrix
    w_matrix = _pair_weighted_matrix(oracle, delta, {1})
    if vb.n_edges:
        left = float(np.sum(vb.j_values * w_matrix[vb.left_sites, vb.right_sites]))
    else:
        left = 0.0
    left /= alpha * n_sites
    # right side: exact average over fresh (J, u, v)
    p0 = oracle.pair_moment_matrix(0)
    right = 0.0
    for j_atom, j_prob in zip(j_law.atoms, j_law.probs):
        lam = math.tanh(beta_prime * j_atom)
        numer = np.zeros((n_sites, n_sites))
        for size in range(0, n + 2):
            for subset in itertools.combinations(range(1, n + 2), size):
                k_labels = set(subset) ^ {1}
                numer += lam ** size * _pair_weighted_matrix(oracle, delta, k_labels)
        ratio = numer / (1.0 + lam * p0) ** (n + 1)
        right += j_prob * j_atom * float(ratio.mean())
    return left, right


def _poisson_ibp_replicate(mspec: ModelSpec, law: DisorderSpec, alpha: float,
                           beta_prime: float, n: int, fn: TestFunction,
                           j_law: DisorderSpec, exp_id: int, r: int) -> float:
    rng_coup = SeedPath(exp_id, r, 0).generator()
    rng_vb = SeedPath(exp_id, r, 1).generator()
    couplings = sample_couplings(mspec, law, rng_coup)
    vb = sample_vb(alpha, mspec.n_sites, beta_prime, rng_vb, j_law)
    oracle = build_oracle(mspec, couplings, vb=vb)
    left, right = poisson_ibp_realization(oracle, vb, alpha, beta_prime, n, fn, j_law)
    return left - right


def poisson_ibp_check(mspec: ModelSpec, law: DisorderSpec, alpha: float, beta_prime: float,
                      n: int, fn: TestFunction, replicates: int, seed: int,
                      j_law: DisorderSpec | None = None,
                      workers: int | None = 1) -> EstimatorResult:
    """Paired difference of the two sides; consistent with zero when the
    identity holds."""
    if alpha <= 0 or beta_prime == 0.0:
        raise ExperimentError("the identity needs alpha > 0 and beta_prime != 0")
    j_law = j_law if j_law is not None else dis.rademacher()
    exp_id = experiment_id(seed, "poisson-ibp")
    worker = functools.partial(_poisson_ibp_replicate, mspec, law, alpha, beta_prime,
                               n, fn, j_law, exp_id)
    values = _map_replicates(worker, replicates, workers)
    value, err = mean_stderr(values)
    return EstimatorResult("poisson-ibp", value, err, replicates,
                           {"N": mspec.n_sites, "alpha": alpha, "beta_prime": beta_prime,
                            "n": n, "F": fn.label, "seed": seed})


def taylor_coefficient_realization(oracle: GibbsOracle, n: int, m: int,
                                   fn: TestFunction) -> dict[str, float]:
    """Equality of the double-sum and basis forms of the edge-expansion
    coefficient, checked at every endpoint pair of one realization.

    The double sum runs over ordered replica subsets of size a <= min(m, n+1)
    with alternating signs and binomial weights times powers of the plain
    pair moment; the basis form is 1/m! times the signed-basis functional
    applied to sigma^1_{uv} Delta_1 F.  Also checks the endpoint-averaged
    value against the squared-multi-overlap route.
    """
    if not 1 <= m <= 5:
        raise ExperimentError(f"coefficient order must be in 1..5, got {m}")
    n_sites = oracle.n_sites
    delta = replica_difference(fn.functional(n_sites, n), 1)
    p0 = oracle.pair_moment_matrix(0)
    lhs = np.zeros((n_sites, n_sites))
    for a in range(0, min(m, n + 1) + 1):
        inner = np.zeros((n_sites, n_sites))
        for combo in itertools.combinations(range(1, n + 2), a):
            inner += _pair_weighted_matrix(oracle, delta, set(combo) ^ {1})
        lhs += (-1.0) ** (m - a) * math.comb(n + m - a, n) * inner * p0 ** (m - a)
    # basis route, expanded symbolically over the basis terms; the monomial
    # site mask is a placeholder since only the label structure is used here
    rhs = np.zeros((n_sites, n_sites))
    basis = signed_basis(1, m, n + 1)
    pref = 1.0 / math.factorial(m)
    for key, coeff in basis.terms.items():
        labels = {l for l, _ in key}
        rhs += pref * coeff * _pair_weighted_matrix(oracle, delta, labels ^ {1})
    pointwise = float(np.max(np.abs(lhs - rhs)))
    # endpoint-averaged value against the squared-multi-overlap evaluator
    averaged = float(rhs.mean())
    total = 0.0
    for key, coeff in basis.terms.items():
        labels = frozenset(l for l, _ in key) ^ {1}
        for dkey, dcoeff in delta.terms.items():
            total += (pref * coeff * dcoeff
                      * multioverlap_sq_expectation(oracle, labels, dict(dkey)))
    return {"pointwise": pointwise, "averaged": abs(averaged - total)}


# -- recorded trend suite ----------------------------------------------------

TREND_SIZES = (4, 8, 12, 16)
TREND_REPLICATES = 4000
TREND_FIELD = 0.3
TREND_BETA = 1.0


def trend_suite(n_values=TREND_SIZES, replicates: int = TREND_REPLICATES, seed: int = 7,
                workers: int | None = None) -> list[EstimatorResult]:
    """The recorded finite-size trend battery on the pair-interaction model.

    Six series over the size ladder: the replica-coupling gap (Rademacher),
    the Gaussian-vs-Rademacher universality gap, thermal self-averaging,
    the derivative moment sums at orders 3 and 4 (Gaussian), and the free
    energy fluctuation (Rademacher).  Each series should shrink with N.

    The derivative sums use the three-site single-replica monomial: among the
    monomial test functions it shows the strongest size decay of the order-4
    sum at these sizes (the order-3 decay is steep for every choice).
    """
    fn_overlap = overlap_square()
    fn_mono = spin_monomial(((0, 1, 2),))
    rows: list[EstimatorResult] = []
    for n_sites in n_values:
        mspec = ModelSpec(n_sites, {2: TREND_BETA}, TREND_FIELD)
        rows.append(gg_gap(mspec, dis.rademacher(), 2, 2, fn_overlap,
                           replicates, seed, workers))
        rows.append(universality_gap(mspec, dis.gaussian(), dis.rademacher(), fn_overlap,
                                     replicates, seed, workers))
        rows.append(self_averaging(mspec, dis.gaussian(), 2, replicates, seed,
                                   mode="thermal", workers=workers))
        for m in (3, 4):
            rows.append(derivative_moment_sum(mspec, dis.gaussian(), 1, m, fn_mono,
                                              replicates, seed, workers))
        rows.append(free_energy_fluctuation(mspec, dis.rademacher(), replicates, seed,
                                            workers))
    return rows


def taylor_coefficient_check(mspec: ModelSpec, law: DisorderSpec, alpha: float,
                             beta_prime: float, n: int, fn: TestFunction, m_values,
                             realizations: int, seed: int,
                             j_law: DisorderSpec | None = None) -> dict[int, dict[str, float]]:
    """Worst residuals of the coefficient identity per expansion order."""
    j_law = j_law if j_law is not None else dis.rademacher()
    exp_id = experiment_id(seed, "taylor-coefficients")
    worst = {m: {"pointwise": 0.0, "averaged": 0.0} for m in m_values}
    for r in range(realizations):
        rng_coup = SeedPath(exp_id, r, 0).generator()
        rng_vb = SeedPath(exp_id, r, 1).generator()
        couplings = sample_couplings(mspec, law, rng_coup)
        vb = sample_vb(alpha, mspec.n_sites, beta_prime, rng_vb, j_law)
        oracle = build_oracle(mspec, couplings, vb=vb)
        for m in m_values:
            got = taylor_coefficient_realization(oracle, n, m, fn)
            for key in got:
                worst[m][key] = max(worst[m][key], got[key])
    return worst
