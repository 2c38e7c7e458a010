"""Mixed p-spin models on the hypercube with dense coupling tables.

A model couples N Ising spins sigma_i in {-1, +1} through independent random
couplings attached to ordered site tuples.  The interaction energy of order p
is

    beta_p * N**(-(p - 1) / 2) * sum_{i in {1..N}^p} xi_i * sigma_{i_1} ... sigma_{i_p}

and an external field h adds h * sum_i sigma_i.  Tuple sums deliberately run
over all of {1..N}^p, repeated entries included, so diagonal tuples such as
(i, i) contribute constant sigma_i**2 = 1 terms; nothing is symmetrized away.
Gibbs weights use exp(+H).

Site indices are 0-based throughout the code.  Dense tables of shape (N,)*p
are stored row-major, so ``table[i1, i2, ..., ip]`` is the coupling of the
ordered tuple (i1, ..., ip).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Beyond this many sites a dense 2**N enumeration (and the N**p tables that
# feed it) stops being a reasonable object to build.
EXACT_ENUMERATION_CAP = 20

# Order cap for large systems: dense N**p tables with p >= 4 are only
# accepted while N stays small enough to enumerate exactly.
LARGE_SYSTEM_MAX_ORDER = 3

_CONTRACT_CHUNK = 1 << 23  # max scratch elements in batched contractions


class ModelValidationError(ValueError):
    """Raised when a model spec, coupling table, or argument is malformed."""


class ResourceCapError(ValueError):
    """Raised when a request exceeds the exact-enumeration resource caps."""


@dataclass(frozen=True)
class ModelSpec:
    """Sizes and strengths of a mixed p-spin model.

    Args:
        n_sites: number of spins N. Must be >= 1.
        betas: mapping {p: beta_p} of interaction orders to inverse-temperature
            weights. Orders must be integers >= 2.
        field: external field h applied uniformly to every site.
    """

    n_sites: int
    betas: dict[int, float] = field(default_factory=dict)
    field_h: float = 0.0

    def __post_init__(self):
        if not isinstance(self.n_sites, int) or self.n_sites < 1:
            raise ModelValidationError(f"n_sites must be a positive integer, got {self.n_sites!r}")
        for p, beta in self.betas.items():
            if not isinstance(p, int) or p < 2:
                raise ModelValidationError(f"interaction orders must be integers >= 2, got {p!r}")
            if not math.isfinite(beta):
                raise ModelValidationError(f"beta_{p} must be finite, got {beta!r}")
        if not math.isfinite(self.field_h):
            raise ModelValidationError(f"field must be finite, got {self.field_h!r}")
        if self.n_sites > EXACT_ENUMERATION_CAP:
            bad = [p for p in self.betas if p > LARGE_SYSTEM_MAX_ORDER]
            if bad:
                raise ModelValidationError(
                    f"orders {sorted(bad)} need dense N**p tables; with N={self.n_sites} "
                    f"only p <= {LARGE_SYSTEM_MAX_ORDER} is supported"
                )

    @property
    def orders(self) -> tuple[int, ...]:
        return tuple(sorted(self.betas))

    def scale(self, p: int, n_total: int | None = None) -> float:
        """Normalization N**(-(p-1)/2); n_total overrides N for cavity pieces."""
        n = self.n_sites if n_total is None else n_total
        return float(n) ** (-(p - 1) / 2.0)


@dataclass
class CouplingAssignment:
    """Dense coupling tables, one ndarray of shape (N,)*p per order p."""

    tables: dict[int, np.ndarray]

    def validate(self, spec: ModelSpec) -> None:
        if set(self.tables) != set(spec.betas):
            raise ModelValidationError(
                f"coupling orders {sorted(self.tables)} do not match model orders {sorted(spec.betas)}"
            )
        for p, table in self.tables.items():
            want = (spec.n_sites,) * p
            if table.shape != want:
                raise ModelValidationError(
                    f"order-{p} table has shape {table.shape}, expected {want}"
                )
            if not np.all(np.isfinite(table)):
                raise ModelValidationError(f"order-{p} table contains non-finite entries")

    def copy(self) -> "CouplingAssignment":
        return CouplingAssignment({p: t.copy() for p, t in self.tables.items()})


def spins_to_index(spins: np.ndarray) -> int:
    """Pack a ±1 spin vector into its canonical configuration index.

    Bit b of the index is set iff spins[b] == +1, so the round trip with
    :func:`index_to_spins` is exact.
    """
    idx = 0
    for b, s in enumerate(spins):
        if s > 0:
            idx |= 1 << b
    return idx


def index_to_spins(index: int, n_sites: int) -> np.ndarray:
    if not 0 <= index < (1 << n_sites):
        raise ModelValidationError(f"configuration index {index} out of range for N={n_sites}")
    return np.array([1.0 if (index >> b) & 1 else -1.0 for b in range(n_sites)])


def spin_matrix(n_sites: int) -> np.ndarray:
    """All 2**N configurations as a (2**N, N) float matrix of ±1 rows."""
    if n_sites > EXACT_ENUMERATION_CAP:
        raise ResourceCapError(
            f"refusing to enumerate 2**{n_sites} configurations (cap N <= {EXACT_ENUMERATION_CAP})"
        )
    count = 1 << n_sites
    codes = np.arange(count, dtype=np.uint32)
    out = np.empty((count, n_sites), dtype=np.float64)
    for b in range(n_sites):
        out[:, b] = ((codes >> b) & 1) * 2.0 - 1.0
    return out


def tuple_sum_batch(table: np.ndarray, configs: np.ndarray) -> np.ndarray:
    """sum_i xi_i * sigma_{i_1}...sigma_{i_p} for every config row at once.

    Contracts one tensor axis per pass, keeping the scratch array within a
    fixed element budget by chunking over configurations.
    """
    n = configs.shape[1]
    p = table.ndim
    rows = n ** (p - 1)
    n_cfg = configs.shape[0]
    chunk = max(1, min(n_cfg, _CONTRACT_CHUNK // max(1, rows)))
    out = np.empty(n_cfg, dtype=np.float64)
    flat = table.reshape(rows, n)
    for start in range(0, n_cfg, chunk):
        block = configs[start:start + chunk]
        acc = flat @ block.T
        for _ in range(p - 1):
            acc = (acc.reshape(-1, n, block.shape[0]) * block.T[None, :, :]).sum(axis=1)
        out[start:start + chunk] = acc.reshape(block.shape[0])
    return out


def interaction_energy(spec: ModelSpec, couplings: CouplingAssignment, spins: np.ndarray,
                       p: int, n_total: int | None = None) -> float:
    """Energy of the order-p interaction alone (no field)."""
    table = couplings.tables[p]
    raw = tuple_sum_batch(table, np.asarray(spins, dtype=np.float64)[None, :])[0]
    return spec.betas[p] * spec.scale(p, n_total) * raw


def hamiltonian_energy(spec: ModelSpec, couplings: CouplingAssignment, spins: np.ndarray) -> float:
    """Total energy H(sigma), interactions plus field."""
    spins = np.asarray(spins, dtype=np.float64)
    if spins.shape != (spec.n_sites,):
        raise ModelValidationError(f"spins shape {spins.shape} does not match N={spec.n_sites}")
    couplings.validate(spec)
    total = spec.field_h * float(spins.sum())
    for p in spec.orders:
        total += interaction_energy(spec, couplings, spins, p)
    return total


def batch_energies(spec: ModelSpec, couplings: CouplingAssignment, configs: np.ndarray,
                   extra: list[np.ndarray] | None = None) -> np.ndarray:
    """Energies of many configurations; `extra` adds per-config energy vectors."""
    couplings.validate(spec)
    total = spec.field_h * configs.sum(axis=1)
    for p in spec.orders:
        total = total + spec.betas[p] * spec.scale(p) * tuple_sum_batch(couplings.tables[p], configs)
    if extra is not None:
        for vec in extra:
            if vec.shape != total.shape:
                raise ModelValidationError(
                    f"extra energy vector has shape {vec.shape}, expected {total.shape}"
                )
            total = total + vec
    return total


@dataclass
class DilutedPairAssignment:
    """A realized diluted pair interaction: K edges with bounded couplings.

    Self-loops (u == v) are kept; they contribute the constant beta_prime * J.
    """

    beta_prime: float
    j_values: np.ndarray
    left_sites: np.ndarray
    right_sites: np.ndarray

    def __post_init__(self):
        k = len(self.j_values)
        if len(self.left_sites) != k or len(self.right_sites) != k:
            raise ModelValidationError("edge arrays must share one length")
        if not math.isfinite(self.beta_prime):
            raise ModelValidationError(f"beta_prime must be finite, got {self.beta_prime!r}")

    @property
    def n_edges(self) -> int:
        return len(self.j_values)


def vb_energy(assignment: DilutedPairAssignment, spins: np.ndarray) -> float:
    """beta' * sum_k J_k * sigma_{u_k} * sigma_{v_k} for one configuration."""
    spins = np.asarray(spins, dtype=np.float64)
    if assignment.n_edges == 0:
        return 0.0
    return float(assignment.beta_prime
                 * (assignment.j_values * spins[assignment.left_sites] * spins[assignment.right_sites]).sum())


def vb_batch_energies(assignment: DilutedPairAssignment, configs: np.ndarray) -> np.ndarray:
    if assignment.n_edges == 0:
        return np.zeros(configs.shape[0])
    prod = configs[:, assignment.left_sites] * configs[:, assignment.right_sites]
    return assignment.beta_prime * (prod * assignment.j_values[None, :]).sum(axis=1)


def remainder_tuple_count(p: int, n_bulk: int, n_cavity: int) -> int:
    """Number of order-p tuples touching at least two cavity sites."""
    return sum(math.comb(p, k) * n_cavity ** k * n_bulk ** (p - k) for k in range(2, p + 1))


@dataclass
class CavityDecomposition:
    """Partition of a full coupling table around the first ``n_cavity`` sites.

    Tuples over the full system {0..N+n'-1} are classified by how many of
    their entries fall in the cavity block {0..n'-1}: none (bulk), exactly one
    (linear field seen by that cavity spin), or at least two (remainder).
    Bulk and field tables are re-indexed to the N bulk sites, but every energy
    keeps the full-system normalization (N+n')**(-(p-1)/2).
    """

    spec: ModelSpec            # full model over N + n' sites
    n_cavity: int
    bulk: CouplingAssignment   # tables of shape (N,)*p
    # field[p] has shape (n', p) + (N,)*(p-1): cavity site j, slot a, rest k
    fields: dict[int, np.ndarray]
    # remainder[p] is (indices, values) with indices (n_rem, p) in full-system coords
    remainder: dict[int, tuple[np.ndarray, np.ndarray]]

    @property
    def n_bulk(self) -> int:
        return self.spec.n_sites - self.n_cavity

    def bulk_energies(self, configs: np.ndarray) -> np.ndarray:
        """Interaction energy of the cavity-free tuples for bulk configs."""
        total = np.zeros(configs.shape[0])
        for p in self.spec.orders:
            total += (self.spec.betas[p] * self.spec.scale(p)
                      * tuple_sum_batch(self.bulk.tables[p], configs))
        return total

    def field_energies(self, configs: np.ndarray) -> np.ndarray:
        """Linear cavity fields: (n', n_configs) array of h_j(sigma) values."""
        out = np.zeros((self.n_cavity, configs.shape[0]))
        for p in self.spec.orders:
            tabs = self.fields[p]
            coef = self.spec.betas[p] * self.spec.scale(p)
            for j in range(self.n_cavity):
                if p == 2:
                    # slot tables are 1-d; contraction is a plain matvec
                    out[j] += coef * (configs @ tabs[j].sum(axis=0))
                else:
                    eff = tabs[j].sum(axis=0)
                    out[j] += coef * tuple_sum_batch(eff, configs)
        return out

    def remainder_energy(self, cavity_spins: np.ndarray, bulk_spins: np.ndarray) -> float:
        """Energy of tuples with >= 2 cavity entries, one (eps, sigma) pair."""
        full = np.concatenate([np.asarray(cavity_spins, dtype=np.float64),
                               np.asarray(bulk_spins, dtype=np.float64)])
        total = 0.0
        for p in self.spec.orders:
            idx, vals = self.remainder[p]
            if len(vals) == 0:
                continue
            prods = full[idx].prod(axis=1)
            total += self.spec.betas[p] * self.spec.scale(p) * float(vals @ prods)
        return total


def cavity_split(spec: ModelSpec, couplings: CouplingAssignment, n_cavity: int) -> CavityDecomposition:
    """Classify every coupling tuple by its cavity-site count.

    The input spec/couplings describe the full system of N + n' sites; the
    first ``n_cavity`` sites are the cavity block.
    """
    couplings.validate(spec)
    if not 0 < n_cavity < spec.n_sites:
        raise ModelValidationError(
            f"n_cavity must lie strictly between 0 and N+n'={spec.n_sites}, got {n_cavity}"
        )
    n_bulk = spec.n_sites - n_cavity
    bulk_tables: dict[int, np.ndarray] = {}
    field_tables: dict[int, np.ndarray] = {}
    remainder: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for p in spec.orders:
        table = couplings.tables[p]
        bulk_slice = (slice(n_cavity, None),) * p
        bulk_tables[p] = table[bulk_slice].copy()
        fields = np.empty((n_cavity, p) + (n_bulk,) * (p - 1))
        for j in range(n_cavity):
            for a in range(p):
                idx = [slice(n_cavity, None)] * p
                idx[a] = j
                fields[j, a] = table[tuple(idx)]
        field_tables[p] = fields
        rem_idx = []
        rem_val = []
        for tup in np.ndindex(*table.shape):
            if sum(1 for e in tup if e < n_cavity) >= 2:
                rem_idx.append(tup)
                rem_val.append(table[tup])
        want = remainder_tuple_count(p, n_bulk, n_cavity)
        if len(rem_idx) != want:
            raise AssertionError(f"remainder class has {len(rem_idx)} tuples, expected {want}")
        remainder[p] = (np.array(rem_idx, dtype=np.intp).reshape(len(rem_idx), p),
                        np.array(rem_val))
    bulk_spec = ModelSpec(n_bulk, dict(spec.betas), spec.field_h) if n_bulk >= 1 else None
    if bulk_spec is None:
        raise ModelValidationError("cavity split needs at least one bulk site")
    return CavityDecomposition(spec=spec, n_cavity=n_cavity,
                               bulk=CouplingAssignment(bulk_tables),
                               fields=field_tables, remainder=remainder)


def interpolated_couplings(first: CouplingAssignment, second: CouplingAssignment,
                           t: float) -> CouplingAssignment:
    """Entrywise sqrt(t)*first + sqrt(1-t)*second.

    Variance is preserved when both inputs have unit-variance entries.
    """
    if not 0.0 <= t <= 1.0:
        raise ModelValidationError(f"interpolation parameter must lie in [0, 1], got {t!r}")
    if set(first.tables) != set(second.tables):
        raise ModelValidationError("coupling assignments cover different interaction orders")
    a = math.sqrt(t)
    b = math.sqrt(1.0 - t)
    out = {}
    for p, table in first.tables.items():
        other = second.tables[p]
        if table.shape != other.shape:
            raise ModelValidationError(
                f"order-{p} tables have mismatched shapes {table.shape} vs {other.shape}"
            )
        out[p] = a * table + b * other
    return CouplingAssignment(out)
