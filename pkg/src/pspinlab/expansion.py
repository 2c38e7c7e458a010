"""Derivative expansion of Gibbs averages in a single coupling entry.

Differentiating <F> in the coupling attached to one site tuple multiplies F
by a signed replica factor (sum over live replicas minus the replica count
times a fresh replica).  Iterating that operator m times produces, after
collecting, an integer combination of a signed basis family of replica
monomials; the integer table A(m, a) obeys a two-term recursion and the basis
obeys a first-order ladder in the coupling entry.  Everything here is exact
at finite N for every disorder realization, which is what the verification
routines check.
"""

from __future__ import annotations

import functools
import itertools
import math

import numpy as np

from .gibbs import (
    GibbsOracle,
    ReplicaFunctional,
    build_oracle,
    multi_overlap,
    sites_to_mask,
)
from .model import CouplingAssignment, ModelSpec, ModelValidationError

# Rows are cheap integer work, but the basis sizes explode combinatorially;
# the cap keeps accidental huge requests from hanging a run.
MAX_DERIVATIVE_ORDER = 30

_row_cache: dict[int, list[int]] = {}


def coefficient_row(m: int) -> list[int]:
    """Integer coefficients [A(m, 0), A(m, 1), ..., A(m, m)] of order m."""
    if not isinstance(m, int) or m < 1:
        raise ModelValidationError(f"derivative order must be a positive integer, got {m!r}")
    if m > MAX_DERIVATIVE_ORDER:
        raise ModelValidationError(
            f"derivative order {m} exceeds the supported cap {MAX_DERIVATIVE_ORDER}"
        )
    got = _row_cache.get(m)
    if got is not None:
        return got
    row = [0, 1]  # A(1, 0) = 0, A(1, 1) = 1
    _row_cache.setdefault(1, list(row))
    for prev in range(1, m):
        nxt = [0] * (prev + 2)
        for a in range(1, prev + 2):
            carry = row[a - 1] if a - 1 <= prev else 0
            keep = row[a] if a <= prev else 0
            nxt[a] = -(prev - 2 * a + 4) * (prev - 2 * a + 3) * carry + keep
        row = nxt
        _row_cache.setdefault(prev + 1, list(row))
    return _row_cache[m]


def expansion_coefficient(m: int, a: int) -> int:
    """A(m, a): weight of the order-(m - 2a + 2) basis term in the m-th derivative."""
    if a < 0:
        raise ModelValidationError(f"index a must be nonnegative, got {a}")
    row = coefficient_row(m)
    return row[a] if a < len(row) else 0


def signed_basis(sites, order: int, n_replicas: int) -> ReplicaFunctional:
    """The signed replica-monomial combination of a given order at one tuple.

    For order m >= 1 on n live replicas this is

        m! * sum_{k=0..min(m,n)} (-1)**(m-k) * C(n+m-k-1, n-1)
             * sum_{l1<...<lk<=n} M(l1..lk, n+1..n+m-k)

    where M(labels) multiplies the tuple monomial onto every listed replica;
    the k = 0 term uses only the m fresh replicas.  Orders <= 0 give the zero
    functional.
    """
    if n_replicas < 1:
        raise ModelValidationError(f"need at least one live replica, got {n_replicas}")
    if order <= 0:
        return ReplicaFunctional.zero(n_replicas)
    mask = sites if isinstance(sites, int) else sites_to_mask(sites)
    n = n_replicas
    pref = math.factorial(order)
    terms: dict = {}
    for k in range(0, min(order, n) + 1):
        coeff = pref * (-1) ** (order - k) * math.comb(n + order - k - 1, n - 1)
        dummies = tuple(range(n + 1, n + order - k + 1))
        for combo in itertools.combinations(range(1, n + 1), k):
            labels = combo + dummies
            key = tuple((l, mask) for l in labels) if mask else ()
            terms[key] = terms.get(key, 0.0) + float(coeff)
    terms = {k: c for k, c in terms.items() if c != 0.0}
    return ReplicaFunctional(terms, n + order)


def apply_derivative_factor(sites, fn: ReplicaFunctional) -> ReplicaFunctional:
    """Multiply by (sum_{l<=n} M_l - n * M_{n+1}) where M_l puts the tuple
    monomial on replica l; raises the replica count by exactly one."""
    mask = sites if isinstance(sites, int) else sites_to_mask(sites)
    n = fn.n_replicas
    out: dict = {}
    for key, coeff in fn.terms.items():
        for label, factor in itertools.chain(((l, 1.0) for l in range(1, n + 1)),
                                             ((n + 1, -float(n)),)):
            new_key = ReplicaFunctional._merge_keys(key, ((label, mask),)) if mask else key
            new = out.get(new_key, 0.0) + coeff * factor
            if new == 0.0:
                out.pop(new_key, None)
            else:
                out[new_key] = new
    return ReplicaFunctional(out, n + 1)


def derivative_power(sites, fn: ReplicaFunctional, order: int) -> ReplicaFunctional:
    out = fn
    for _ in range(order):
        out = apply_derivative_factor(sites, out)
    return out


@functools.lru_cache(maxsize=None)
def derivative_power_tuple_sum(order: int, n_replicas: int) -> dict[frozenset, int]:
    """Symbolic expansion of the m-fold derivative factor at a generic tuple.

    Tracks only the parity of how often each replica receives the tuple
    monomial: the result maps a frozen set of odd-parity replica labels to an
    integer coefficient.  Fresh replicas beyond the first n are exchangeable
    dummies under the Gibbs average, so their labels are canonicalized to
    consecutive values n+1, n+2, ... and coefficients merged accordingly.
    The returned dict is cached; callers must not mutate it.
    """
    states: dict[frozenset, int] = {frozenset(): 1}
    for j in range(1, order + 1):
        live = n_replicas + j - 1
        nxt: dict[frozenset, int] = {}
        for subset, coeff in states.items():
            for label in range(1, live + 1):
                key = subset ^ {label}
                nxt[key] = nxt.get(key, 0) + coeff
            key = subset ^ {live + 1}
            nxt[key] = nxt.get(key, 0) - live * coeff
        states = {k: c for k, c in nxt.items() if c != 0}
    merged: dict[frozenset, int] = {}
    for subset, coeff in states.items():
        kept = sorted(l for l in subset if l <= n_replicas)
        fresh = sum(1 for l in subset if l > n_replicas)
        key = frozenset(kept) | frozenset(range(n_replicas + 1, n_replicas + fresh + 1))
        merged[key] = merged.get(key, 0) + coeff
    return {k: c for k, c in merged.items() if c != 0}


def verify_expansion(oracle: GibbsOracle, sites, fn: ReplicaFunctional,
                     order: int) -> tuple[float, float]:
    """Both sides of the derivative expansion at one tuple and one realization.

    Left: <(derivative factor)**m F>.  Right: sum_a A(m, a) <basis(m-2a+2) F>.
    The basis sum is truncated at a = ceil(m/2); the tail vanishes identically.
    """
    lhs = derivative_power(sites, fn, order).evaluate(oracle)
    n = fn.n_replicas
    rhs = 0.0
    for a in range(1, (order + 1) // 2 + 1):
        coeff = expansion_coefficient(order, a)
        if coeff == 0:
            continue
        basis = signed_basis(sites, order - 2 * a + 2, n)
        rhs += coeff * (basis * fn).evaluate(oracle)
    return lhs, rhs


def _richardson_first(f, x: float, step: float) -> float:
    d1 = (f(x + step) - f(x - step)) / (2.0 * step)
    d2 = (f(x + step / 2.0) - f(x - step / 2.0)) / step
    return (4.0 * d2 - d1) / 3.0


def _richardson_second(f, x: float, step: float) -> float:
    f0 = f(x)
    d1 = (f(x + step) - 2.0 * f0 + f(x - step)) / step ** 2
    d2 = (f(x + step / 2.0) - 2.0 * f0 + f(x - step / 2.0)) / (step / 2.0) ** 2
    return (4.0 * d2 - d1) / 3.0


def verify_ode(spec: ModelSpec, couplings: CouplingAssignment, order_p: int, sites,
               basis_order: int, fn: ReplicaFunctional, step: float = 1e-4) -> dict[str, float]:
    """Finite-difference checks of the coupling-entry derivative structure.

    ``ladder``: N**((p-1)/2)/beta_p * d/dxi <basis(m) F> against
    -m(m-1) <basis(m-1) F> + <basis(m+1) F>.
    ``first`` and ``second``: d^j/dxi^j <F> against
    (beta_p * N**(-(p-1)/2))**j <(derivative factor)**j F>.

    All derivatives use Richardson-extrapolated central differences.
    Returns absolute residuals.
    """
    couplings.validate(spec)
    if order_p not in spec.betas:
        raise ModelValidationError(f"model has no order-{order_p} interaction")
    sites = tuple(int(s) for s in sites)
    if len(sites) != order_p:
        raise ModelValidationError(
            f"tuple {sites} has length {len(sites)}, expected order {order_p}"
        )
    beta = spec.betas[order_p]
    if beta == 0.0:
        raise ModelValidationError("the ladder check needs a nonzero beta_p")
    base = couplings.tables[order_p][sites]
    n = fn.n_replicas

    def averaged(functional):
        def f(x):
            shifted = couplings.copy()
            shifted.tables[order_p][sites] = x
            return functional.evaluate(build_oracle(spec, shifted))
        return f

    scale = float(spec.n_sites) ** ((order_p - 1) / 2.0)
    m = basis_order
    basis_fn = signed_basis(sites, m, n) * fn
    lhs = scale / beta * _richardson_first(averaged(basis_fn), base, step)
    oracle = build_oracle(spec, couplings)
    down = (signed_basis(sites, m - 1, n) * fn).evaluate(oracle)
    up = (signed_basis(sites, m + 1, n) * fn).evaluate(oracle)
    ladder = abs(lhs - (-m * (m - 1) * down + up))

    plain = averaged(fn)
    coef = beta / scale
    d1 = _richardson_first(plain, base, step)
    first = abs(d1 - coef * derivative_power(sites, fn, 1).evaluate(oracle))
    d2 = _richardson_second(plain, base, step)
    second = abs(d2 - coef ** 2 * derivative_power(sites, fn, 2).evaluate(oracle))
    return {"ladder": ladder, "first": first, "second": second}


def fourth_power_tuple_coefficients(n_replicas: int) -> dict[frozenset, int]:
    """The printed eight-group coefficient table for the fourth derivative,
    keyed by concrete label sets with fresh labels n+1, n+2, ... appended."""
    n = n_replicas
    live = range(1, n + 1)
    groups = [
        (24, 4, 0),
        (-24 * n, 3, 1),
        (12 * (n + 1) * n, 2, 2),
        (-4 * (n + 2) * (n + 1) * n, 1, 3),
        ((n + 3) * (n + 2) * (n + 1) * n, 0, 4),
        (-16, 2, 0),
        (16 * n, 1, 1),
        (-8 * (n + 1) * n, 0, 2),
    ]
    table: dict[frozenset, int] = {}
    for coeff, k, fresh in groups:
        dummies = tuple(range(n + 1, n + fresh + 1))
        for combo in itertools.combinations(live, k):
            key = frozenset(combo + dummies)
            table[key] = table.get(key, 0) + coeff
    return {k: c for k, c in table.items() if c != 0}


def fourth_power_identity_check(oracle: GibbsOracle, fn: ReplicaFunctional) -> tuple[float, float]:
    """Tuple-averaged fourth derivative against the printed overlap form.

    Left: N**-2 sum over all site pairs of <(derivative factor)**4 F>,
    computed by iterating the operator at each concrete pair.  Right: the
    eight-group combination of squared multi-overlaps times F.  Small N only.
    """
    n_sites = oracle.n_sites
    n = fn.n_replicas
    lhs = 0.0
    for pair in itertools.product(range(n_sites), repeat=2):
        lhs += derivative_power(pair, fn, 4).evaluate(oracle)
    lhs /= float(n_sites) ** 2
    rhs = 0.0
    for labels, coeff in fourth_power_tuple_coefficients(n).items():
        block = multi_overlap(sorted(labels), 2, n_sites, n_replicas=max(max(labels), n))
        rhs += coeff * (block * fn).evaluate(oracle)
    return lhs, rhs


def series_identity_check(a_coeffs, b: float, x: float, n_replicas: int,
                          tail_target: float = 1e-13) -> dict[str, float]:
    """Closed form of (sum_m A_m x**m) / (1 - B x)**(n+1) against its series.

    The series coefficients are c_m = sum_{a<=min(m,n+1)} C(n+m-a, n) A_a
    B**(m-a).  Truncation continues until the geometric ratio bound pushes
    the tail below ``tail_target``.
    """
    n = n_replicas
    a_coeffs = [float(c) for c in a_coeffs]
    if len(a_coeffs) != n + 2:
        raise ModelValidationError(
            f"need the n+2 coefficients A_0..A_{n + 1}, got {len(a_coeffs)}"
        )
    q = abs(b * x)
    if q >= 1.0:
        raise ModelValidationError(f"|B*x| must be below 1, got {q!r}")
    closed = sum(c * x ** m for m, c in enumerate(a_coeffs)) / (1.0 - b * x) ** (n + 1)
    total = 0.0
    m = 0
    tail = math.inf
    last = 0.0
    while True:
        c_m = sum(math.comb(n + m - a, n) * a_coeffs[a] * b ** (m - a)
                  for a in range(0, min(m, n + 1) + 1))
        last = c_m * x ** m
        total += last
        if m > 2 * n + 2:
            ratio = q * (n + m + 1) / (m - n)
            if ratio < 1.0:
                tail = abs(last) * ratio / (1.0 - ratio)
                if tail <= tail_target:
                    break
        m += 1
        if m > 10000:
            raise ModelValidationError("series truncation failed to converge")
    return {"closed": closed, "series": total,
            "residual": abs(closed - total), "tail_bound": tail}
