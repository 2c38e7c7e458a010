"""Coupling disorder: scalar laws with declared moments and seeded sampling.

Every law is standardized to mean 0 and variance 1 and carries its first four
moments as declared data, so downstream checks can verify what they were
given by quadrature instead of trusting the label.  Sampling goes through a
counter-based generator keyed by an (experiment, replicate, stream) path;
equal paths reproduce bit-identical draws and distinct paths give
independent streams.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .model import CouplingAssignment, ModelSpec, ModelValidationError, DilutedPairAssignment

_MASK64 = (1 << 64) - 1
_GH_NODES = 64

# Two-sided standard-normal quantile at 1 - 1e-12; effective support bound
# used when a working interval is needed for an unbounded law.
GAUSSIAN_SUPPORT = 7.035


class DisorderValidationError(ValueError):
    """Raised when a disorder law or its parameters are malformed."""


@dataclass(frozen=True)
class SeedPath:
    """Hierarchical RNG address: experiment id, replicate index, stream index."""

    experiment: int
    replicate: int = 0
    stream: int = 0

    def __post_init__(self):
        for name in ("experiment", "replicate", "stream"):
            v = getattr(self, name)
            if not isinstance(v, int) or not 0 <= v <= _MASK64:
                raise DisorderValidationError(f"{name} must be a 64-bit unsigned integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        """Counter-based generator for this path (Philox keyed by the triple)."""
        seq = np.random.SeedSequence(entropy=(self.experiment, self.replicate, self.stream))
        return np.random.Generator(np.random.Philox(seed=seq))

    def child(self, replicate: int | None = None, stream: int | None = None) -> "SeedPath":
        return SeedPath(self.experiment,
                        self.replicate if replicate is None else replicate,
                        self.stream if stream is None else stream)


def experiment_id(seed: int, name: str) -> int:
    """Stable 64-bit experiment id from a user seed and an experiment name."""
    return ((seed & _MASK64) ^ (zlib.crc32(name.encode("utf-8")) << 32)) & _MASK64


@dataclass(frozen=True)
class DisorderSpec:
    """A standardized scalar coupling law.

    Attributes:
        family: label of the construction ("gaussian", "rademacher", ...).
        moments: declared (m1, m2, m3, m4).
        atoms, probs: support and weights for purely discrete laws.
        gaussian_weight: std-dev of an independent Gaussian component mixed
            onto the discrete part (used by the near-Gaussian family).
        bounded: True when the law has compact support.
    """

    family: str
    moments: tuple[float, float, float, float]
    atoms: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()
    gaussian_weight: float = 0.0
    uniform_halfwidth: float = 0.0
    bounded: bool = True

    def __post_init__(self):
        if self.atoms and len(self.atoms) != len(self.probs):
            raise DisorderValidationError("atoms and probs must have equal lengths")
        if self.probs:
            if any(q < 0 for q in self.probs):
                raise DisorderValidationError("atom probabilities must be nonnegative")
            if abs(sum(self.probs) - 1.0) > 1e-12:
                raise DisorderValidationError(f"atom probabilities sum to {sum(self.probs)!r}, not 1")

    # -- sampling -----------------------------------------------------------

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.family == "gaussian":
            return rng.standard_normal(shape)
        if self.family == "uniform":
            w = self.uniform_halfwidth
            return rng.uniform(-w, w, size=shape)
        out = np.zeros(shape, dtype=np.float64)
        if self.atoms:
            choice = rng.choice(len(self.atoms), size=shape, p=np.array(self.probs))
            out = np.array(self.atoms)[choice].astype(np.float64)
        if self.gaussian_weight:
            out = out + self.gaussian_weight * rng.standard_normal(shape)
        return out

    # -- exact moment machinery --------------------------------------------

    def nodes_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature representation integrating polynomials of this law.

        Discrete parts are summed exactly; Gaussian components use
        Gauss-Hermite nodes; the uniform family uses Gauss-Legendre.
        """
        if self.family == "gaussian":
            h, w = np.polynomial.hermite.hermgauss(_GH_NODES)
            return h * math.sqrt(2.0), w / math.sqrt(math.pi)
        if self.family == "uniform":
            x, w = np.polynomial.legendre.leggauss(_GH_NODES)
            return x * self.uniform_halfwidth, w / 2.0
        atoms = np.array(self.atoms if self.atoms else (0.0,))
        probs = np.array(self.probs if self.probs else (1.0,))
        if not self.gaussian_weight:
            return atoms, probs
        h, w = np.polynomial.hermite.hermgauss(_GH_NODES)
        g_nodes = h * math.sqrt(2.0) * self.gaussian_weight
        g_weights = w / math.sqrt(math.pi)
        nodes = (atoms[:, None] + g_nodes[None, :]).ravel()
        weights = (probs[:, None] * g_weights[None, :]).ravel()
        return nodes, weights

    def quadrature_moment(self, k: int) -> float:
        nodes, weights = self.nodes_weights()
        return float(weights @ nodes ** k)

    def support_interval(self) -> tuple[float, float]:
        """Working interval covering the law up to the 1 - 1e-12 tail."""
        if self.family == "gaussian":
            return (-GAUSSIAN_SUPPORT, GAUSSIAN_SUPPORT)
        if self.family == "uniform":
            return (-self.uniform_halfwidth, self.uniform_halfwidth)
        lo = min(self.atoms) if self.atoms else 0.0
        hi = max(self.atoms) if self.atoms else 0.0
        if self.gaussian_weight:
            lo -= GAUSSIAN_SUPPORT * self.gaussian_weight
            hi += GAUSSIAN_SUPPORT * self.gaussian_weight
        return (lo, hi)

    def validate_moments(self, tol: float = 1e-10) -> None:
        """Check the declared (m1..m4) against quadrature to ``tol``."""
        for k in range(1, 5):
            got = self.quadrature_moment(k)
            want = self.moments[k - 1]
            if abs(got - want) > tol:
                raise DisorderValidationError(
                    f"{self.family}: declared m{k}={want!r} but quadrature gives {got!r}"
                )


def gaussian() -> DisorderSpec:
    return DisorderSpec("gaussian", (0.0, 1.0, 0.0, 3.0), bounded=False)


def rademacher() -> DisorderSpec:
    return DisorderSpec("rademacher", (0.0, 1.0, 0.0, 1.0), atoms=(-1.0, 1.0), probs=(0.5, 0.5))


def uniform_scaled() -> DisorderSpec:
    """Uniform on [-sqrt(3), sqrt(3)]: unit variance, fourth moment 9/5."""
    w = math.sqrt(3.0)
    return DisorderSpec("uniform", (0.0, 1.0, 0.0, 9.0 / 5.0), uniform_halfwidth=w)


def three_point(fourth_moment: float = 9.0) -> DisorderSpec:
    """Symmetric atoms {-a, 0, +a} with unit variance and chosen m4 = a**2."""
    if fourth_moment < 1.0:
        raise DisorderValidationError(
            f"a symmetric three-point law needs fourth moment >= 1, got {fourth_moment!r}"
        )
    a = math.sqrt(fourth_moment)
    p = 1.0 / (2.0 * fourth_moment)
    return DisorderSpec("three-point", (0.0, 1.0, 0.0, fourth_moment),
                        atoms=(-a, 0.0, a), probs=(p, 1.0 - 2.0 * p, p))


def discrete(atoms, probs, family: str = "discrete") -> DisorderSpec:
    """Custom discrete law; mean and variance are validated at construction."""
    atoms = tuple(float(a) for a in atoms)
    probs = tuple(float(q) for q in probs)
    moments = tuple(sum(q * a ** k for a, q in zip(atoms, probs)) for k in (1, 2, 3, 4))
    spec = DisorderSpec(family, moments, atoms=atoms, probs=probs)
    if abs(moments[0]) > 1e-10 or abs(moments[1] - 1.0) > 1e-10:
        raise DisorderValidationError(
            f"custom law must be standardized: got mean {moments[0]!r}, variance {moments[1]!r}"
        )
    return spec


def golden_skew() -> DisorderSpec:
    """Two-atom law with m1=0, m2=1, m3=1 exactly.

    The moment system pins the atoms at the golden ratio phi and -1/phi with
    weights (5 -+ sqrt 5)/10; the fourth moment comes out to exactly 2.
    """
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    p = (5.0 - math.sqrt(5.0)) / 10.0
    return DisorderSpec("golden-skew", (0.0, 1.0, 1.0, 2.0),
                        atoms=(phi, -1.0 / phi), probs=(p, 1.0 - p))


def skewed_three_point(fourth_moment: float = 9.0) -> DisorderSpec:
    """Three-atom law with m1=0, m2=1, m3=1 and a chosen fourth moment.

    Solving the moment system with support {a, b, 0} forces a + b = 1 and
    ab = 1 - m4, so the outer atoms are the roots of x**2 - x - (m4 - 1).
    """
    if fourth_moment <= 2.0:
        raise DisorderValidationError(
            f"the skewed three-point family needs fourth moment > 2, got {fourth_moment!r}"
        )
    disc = math.sqrt(1.0 + 4.0 * (fourth_moment - 1.0))
    a = (1.0 + disc) / 2.0
    b = (1.0 - disc) / 2.0
    p = 1.0 / (a * (a - b))
    q = -p * a / b
    return DisorderSpec("skewed-three-point", (0.0, 1.0, 1.0, fourth_moment),
                        atoms=(a, b, 0.0), probs=(p, q, 1.0 - p - q))


def near_gaussian_family(size: int, skew: DisorderSpec | None = None) -> DisorderSpec:
    """Law drifting to the Gaussian as ``size`` grows, with third moment size**-1/2.

    Mixes a unit-skew discrete law zeta (m1=0, m2=1, m3=1) scaled by
    size**(-1/6) with an independent Gaussian scaled by sqrt(1 - size**(-1/3)).
    The declared moments are m3 = size**(-1/2) and
    m4 = size**(-2/3) * (E zeta**4 - 3) + 3.
    """
    if size < 2:
        raise DisorderValidationError(f"the near-Gaussian family needs size >= 2, got {size}")
    if skew is None:
        skew = golden_skew()
    if skew.gaussian_weight or skew.family in ("gaussian", "uniform") or not skew.atoms:
        raise DisorderValidationError("the skew component must be a discrete law")
    if abs(skew.moments[0]) > 1e-10 or abs(skew.moments[1] - 1.0) > 1e-10:
        raise DisorderValidationError("the skew component must have mean 0 and variance 1")
    if abs(skew.moments[2] - 1.0) > 1e-10:
        raise DisorderValidationError(
            f"the skew component must have third moment 1, got {skew.moments[2]!r}"
        )
    a = float(size) ** (-1.0 / 6.0)
    b = math.sqrt(1.0 - float(size) ** (-1.0 / 3.0))
    m4 = float(size) ** (-2.0 / 3.0) * (skew.moments[3] - 3.0) + 3.0
    return DisorderSpec(
        "near-gaussian",
        (0.0, 1.0, float(size) ** -0.5, m4),
        atoms=tuple(a * z for z in skew.atoms),
        probs=skew.probs,
        gaussian_weight=b,
        bounded=False,
    )


def by_name(name: str, **params) -> DisorderSpec:
    """Construct a law from its config-file name."""
    if name == "gaussian":
        return gaussian()
    if name == "rademacher":
        return rademacher()
    if name == "uniform":
        return uniform_scaled()
    if name == "three-point":
        return three_point(**params)
    if name == "golden-skew":
        return golden_skew()
    if name == "skewed-three-point":
        return skewed_three_point(**params)
    if name == "near-gaussian":
        if "size" not in params:
            raise DisorderValidationError("near-gaussian needs a 'size' parameter")
        size = params.pop("size")
        skew = params.pop("skew", None)
        if params:
            raise DisorderValidationError(f"unknown near-gaussian parameters {sorted(params)}")
        return near_gaussian_family(size, skew)
    if name == "discrete":
        return discrete(**params)
    raise DisorderValidationError(f"unknown disorder family {name!r}")


def sample_couplings(spec: ModelSpec, law: DisorderSpec, rng: np.random.Generator) -> CouplingAssignment:
    """Draw one dense coupling table per interaction order, orders in sorted order."""
    tables = {}
    for p in spec.orders:
        tables[p] = law.sample(rng, (spec.n_sites,) * p)
    return CouplingAssignment(tables)


def sample_vb(alpha: float, n_sites: int, beta_prime: float, rng: np.random.Generator,
              j_law: DisorderSpec | None = None) -> DilutedPairAssignment:
    """Draw a diluted pair interaction: Poisson(alpha*N) edges, uniform endpoints.

    The edge-coupling law must be bounded with vanishing odd moments.
    """
    if alpha < 0:
        raise DisorderValidationError(f"alpha must be nonnegative, got {alpha!r}")
    if j_law is None:
        j_law = rademacher()
    if not j_law.bounded:
        raise DisorderValidationError("edge couplings must follow a bounded law")
    if abs(j_law.moments[0]) > 1e-10 or abs(j_law.moments[2]) > 1e-10:
        raise DisorderValidationError("edge couplings need vanishing first and third moments")
    k = int(rng.poisson(alpha * n_sites))
    left = rng.integers(0, n_sites, size=k)
    right = rng.integers(0, n_sites, size=k)
    j_values = j_law.sample(rng, k)
    return DilutedPairAssignment(beta_prime=beta_prime, j_values=np.asarray(j_values, dtype=np.float64),
                               left_sites=left, right_sites=right)


def standard_families() -> list[DisorderSpec]:
    """The laws exercised by the verification batteries."""
    return [gaussian(), rademacher(), uniform_scaled(), three_point(9.0), golden_skew()]
