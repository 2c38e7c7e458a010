"""Configuration-driven experiment runner.

One experiment per invocation, described by a JSON config tree.  Outputs are
a fixed-schema CSV (floats printed with 17 significant digits, so reruns
with the same config and seed are byte-identical) and a manifest JSON, both
written atomically.  ``verify`` bundles small self-check suites with
pass/fail lines and exit code 1 on numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

from . import __version__
from . import disorder as dis
from . import experiments as ex
from .disorder import DisorderValidationError
from .expansion import (
    coefficient_row,
    expansion_coefficient,
    series_identity_check,
    verify_expansion,
)
from .gibbs import build_oracle
from .ibp import battery
from .model import ModelSpec, ModelValidationError, ResourceCapError

USAGE_ERROR = 2
NUMERIC_ERROR = 1


class ConfigError(ValueError):
    """Raised when a run config is malformed or has unknown keys."""


# -- config parsing ----------------------------------------------------------

_TOP_KEYS = {"experiment", "model", "disorder", "params", "replicates", "seed",
             "output", "format", "workers"}
_MODEL_KEYS = {"n_sites", "betas", "field"}
_FUNCTION_KEYS = {"kind", "power", "sites"}

# per-experiment allowed keys inside "params"
_EXPERIMENTS: dict[str, tuple[set, str]] = {
    "gg-gap": ({"n", "p", "function"},
               "replica-coupling gap linking the (n+1)-replica overlap moment "
               "to the n-replica ones"),
    "gg-thermal-gap": ({"n", "p", "function"},
                       "purely thermal replica-coupling combination over n+2 replicas"),
    "self-averaging": ({"p", "mode"},
                       "concentration of the order-p interaction energy "
                       "(thermal variance or centered absolute deviation)"),
    "universality-gap": ({"function", "disorder_b"},
                         "difference of Gibbs averages between two disorder families"),
    "interpolation-sweep": ({"function", "t_grid"},
                            "Gibbs average along the square-root interpolation "
                            "between a law and the Gaussian"),
    "cavity-identity": ({"n_cavity", "cavity_sets"},
                        "two-route check of the cavity-field representation of "
                        "spin marginals"),
    "derivative-moment-sum": ({"n", "m", "function"},
                              "tuple-averaged m-th coupling derivative of a Gibbs "
                              "average, via squared multi-overlaps"),
    "vb-logz-increment": ({"alpha", "beta_prime"},
                          "per-edge log-partition gain from a diluted pair "
                          "interaction; lies in [0, beta'] on average"),
    "poisson-ibp": ({"alpha", "beta_prime", "n", "function"},
                    "paired two-sided check of the Poisson integration-by-parts "
                    "identity for the diluted term"),
    "free-energy-fluctuation": (set(),
                                "disorder variance of the free energy density"),
    "ibp-battery": (set(),
                    "approximate-integration-by-parts remainders and envelope "
                    "bounds over the standard laws and smooth functions"),
    "trend-suite": ({"n_values"},
                    "the recorded six-series finite-size trend battery"),
}

# experiments that run without model/disorder sections
_SELF_CONTAINED = {"ibp-battery", "trend-suite"}

VERIFY_SUITES = ("expansion", "ibp", "cavity", "gg", "universality", "vb")


@dataclass(frozen=True)
class RunConfig:
    """A validated run request; round-trips losslessly through to_dict."""

    experiment: str
    n_sites_list: tuple[int, ...]
    betas: dict[int, float]
    field_h: float
    disorder: dict
    params: dict
    replicates: int
    seed: int
    output: str
    emit_format: str = "csv"
    workers: int | None = None

    def to_dict(self) -> dict:
        out = {
            "experiment": self.experiment,
            "params": dict(self.params),
            "replicates": self.replicates,
            "seed": self.seed,
            "output": self.output,
            "format": self.emit_format,
        }
        if self.experiment not in _SELF_CONTAINED:
            out["model"] = {
                "n_sites": list(self.n_sites_list),
                "betas": {str(p): b for p, b in self.betas.items()},
                "field": self.field_h,
            }
            out["disorder"] = dict(self.disorder)
        if self.workers is not None:
            out["workers"] = self.workers
        return out


def _reject_unknown(mapping: dict, allowed: set, where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys {sorted(unknown)}; allowed: {sorted(allowed)}")


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(raw, _TOP_KEYS, "config")
    name = raw.get("experiment")
    if name not in _EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; known: {sorted(_EXPERIMENTS)}")

    if name in _SELF_CONTAINED:
        if "model" in raw or "disorder" in raw:
            raise ConfigError(f"experiment {name!r} takes no model/disorder sections")
        sizes: tuple[int, ...] = ()
        betas: dict[int, float] = {}
        field_h = 0.0
        disorder: dict = {}
    else:
        model = raw.get("model")
        if not isinstance(model, dict):
            raise ConfigError("config needs a 'model' object")
        _reject_unknown(model, _MODEL_KEYS, "model")
        n_raw = model.get("n_sites")
        sizes = tuple(n_raw) if isinstance(n_raw, list) else (n_raw,)
        if not sizes or not all(isinstance(n, int) and n >= 1 for n in sizes):
            raise ConfigError(f"model.n_sites must be a positive integer or list, got {n_raw!r}")
        betas_raw = model.get("betas", {})
        if not isinstance(betas_raw, dict):
            raise ConfigError("model.betas must be an object of p: beta pairs")
        betas = {}
        for key, value in betas_raw.items():
            try:
                p = int(key)
            except (TypeError, ValueError):
                raise ConfigError(f"model.betas key {key!r} is not an integer order") from None
            if p < 2:
                raise ConfigError(f"model.betas key {key!r}: p must be >= 2")
            betas[p] = float(value)
        field_h = float(model.get("field", 0.0))
        disorder = raw.get("disorder")
        if not isinstance(disorder, dict) or "family" not in disorder:
            raise ConfigError("config needs a 'disorder' object with a 'family'")

    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("'params' must be an object")
    allowed, _ = _EXPERIMENTS[name]
    _reject_unknown(params, allowed, f"params for {name!r}")

    replicates = raw.get("replicates", 1)
    if not isinstance(replicates, int) or replicates < 1:
        raise ConfigError(f"replicates must be a positive integer, got {replicates!r}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < (1 << 64):
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    emit = raw.get("format", "csv")
    if emit not in ("csv", "json"):
        raise ConfigError(f"format must be 'csv' or 'json', got {emit!r}")
    workers = raw.get("workers")
    if workers is not None and (not isinstance(workers, int) or workers < 1):
        raise ConfigError(f"workers must be a positive integer, got {workers!r}")
    output = raw.get("output", "results")
    if not isinstance(output, str) or not output:
        raise ConfigError(f"output must be a directory path, got {output!r}")
    return RunConfig(name, sizes, betas, field_h, disorder or {}, dict(params),
                     replicates, seed, output, emit, workers)


def _build_law(spec: dict) -> dis.DisorderSpec:
    spec = dict(spec)
    family = spec.pop("family")
    try:
        return dis.by_name(family, **spec)
    except TypeError as err:
        raise ConfigError(f"bad parameters for disorder family {family!r}: {err}") from None


def _build_function(spec) -> ex.TestFunction:
    if spec is None:
        return ex.overlap_square()
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("'function' must be an object with a 'kind'")
    _reject_unknown(spec, _FUNCTION_KEYS, "function")
    kind = spec["kind"]
    if kind == "one":
        return ex.constant_one()
    if kind == "overlap-power":
        return ex.TestFunction("overlap-power", power=int(spec.get("power", 2)))
    if kind == "spin-monomial":
        return ex.spin_monomial(spec.get("sites", ()))
    raise ConfigError(f"unknown function kind {kind!r}")


# -- dispatch ----------------------------------------------------------------


def _dispatch(config: RunConfig) -> list[ex.EstimatorResult]:
    name = config.experiment
    p = config.params
    if name == "ibp-battery":
        rows = []
        for entry in battery():
            rows.append(ex.EstimatorResult(
                "ibp-battery", entry["residual"], 0.0, 1,
                {"law": entry["law"], "function": entry["function"],
                 "gamma": entry["gamma"], "seed": config.seed}))
        return rows
    if name == "trend-suite":
        sizes = tuple(p.get("n_values", ex.TREND_SIZES))
        return ex.trend_suite(sizes, config.replicates, config.seed, config.workers)

    law = _build_law(config.disorder)
    results: list[ex.EstimatorResult] = []
    for n_sites in config.n_sites_list:
        mspec = ModelSpec(n_sites, dict(config.betas), config.field_h)
        if name == "gg-gap":
            results.append(ex.gg_gap(mspec, law, int(p.get("n", 2)), int(p.get("p", 2)),
                                     _build_function(p.get("function")),
                                     config.replicates, config.seed, config.workers))
        elif name == "gg-thermal-gap":
            results.append(ex.gg_thermal_gap(mspec, law, int(p.get("n", 2)), int(p.get("p", 2)),
                                             _build_function(p.get("function")),
                                             config.replicates, config.seed, config.workers))
        elif name == "self-averaging":
            results.append(ex.self_averaging(mspec, law, int(p.get("p", 2)),
                                             config.replicates, config.seed,
                                             mode=p.get("mode", "thermal"),
                                             workers=config.workers))
        elif name == "universality-gap":
            law_b = _build_law(p.get("disorder_b", {"family": "rademacher"}))
            results.append(ex.universality_gap(mspec, law, law_b,
                                               _build_function(p.get("function")),
                                               config.replicates, config.seed, config.workers))
        elif name == "interpolation-sweep":
            results.extend(ex.interpolation_sweep(mspec, law, p.get("t_grid", (0.0, 0.5, 1.0)),
                                                  _build_function(p.get("function")),
                                                  config.replicates, config.seed, config.workers))
        elif name == "cavity-identity":
            n_cavity = int(p.get("n_cavity", 1))
            sets = tuple(tuple(c) for c in p.get("cavity_sets", [[0]]))
            got = ex.cavity_identity_check(mspec, law, n_cavity, sets,
                                           config.replicates, config.seed)
            results.append(ex.EstimatorResult(
                "cavity-identity", got["max_factor_residual"], 0.0, config.replicates,
                {"N": n_sites, "n_cavity": n_cavity,
                 "product_residual": got["product_residual"], "seed": config.seed}))
        elif name == "derivative-moment-sum":
            results.append(ex.derivative_moment_sum(mspec, law, int(p.get("n", 2)),
                                                    int(p.get("m", 4)),
                                                    _build_function(p.get("function")),
                                                    config.replicates, config.seed,
                                                    config.workers))
        elif name == "vb-logz-increment":
            results.append(ex.vb_logz_increment(mspec, law, float(p.get("alpha", 0.5)),
                                                float(p.get("beta_prime", 0.5)),
                                                config.replicates, config.seed,
                                                workers=config.workers))
        elif name == "poisson-ibp":
            results.append(ex.poisson_ibp_check(mspec, law, float(p.get("alpha", 0.5)),
                                                float(p.get("beta_prime", 0.5)),
                                                int(p.get("n", 2)),
                                                _build_function(p.get("function")),
                                                config.replicates, config.seed,
                                                workers=config.workers))
        elif name == "free-energy-fluctuation":
            results.append(ex.free_energy_fluctuation(mspec, law, config.replicates,
                                                      config.seed, config.workers))
        else:
            raise ConfigError(f"experiment {name!r} has no dispatcher")
    return results


# -- output writing ----------------------------------------------------------

CSV_HEADER = ("experiment", "N", "n", "p", "param_key", "param_value",
              "value", "std_error", "replicates", "seed")
_STRUCTURAL = ("N", "n", "p", "seed")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def result_rows(results: list[ex.EstimatorResult]) -> list[tuple[str, ...]]:
    rows = []
    for r in results:
        params = dict(r.params)
        structural = {k: params.pop(k, "") for k in _STRUCTURAL}
        leftovers = sorted(params.items())
        rows.append((
            r.experiment,
            _fmt(structural["N"]),
            _fmt(structural["n"]),
            _fmt(structural["p"]),
            "|".join(k for k, _ in leftovers),
            "|".join(_fmt(v) for _, v in leftovers),
            _fmt(float(r.value)),
            _fmt(float(r.std_error)),
            _fmt(r.replicates),
            _fmt(structural["seed"]),
        ))
    return rows


def render_csv(results: list[ex.EstimatorResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(result_rows(results))
    return buf.getvalue()


def render_json(results: list[ex.EstimatorResult]) -> str:
    rows = [dict(zip(CSV_HEADER, row)) for row in result_rows(results)]
    return json.dumps(rows, indent=2, sort_keys=True) + "\n"


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_outputs(config: RunConfig, results: list[ex.EstimatorResult],
                  elapsed: float) -> list[str]:
    os.makedirs(config.output, exist_ok=True)
    ext = "csv" if config.emit_format == "csv" else "json"
    result_path = os.path.join(config.output, f"{config.experiment}-{config.seed}.{ext}")
    text = render_csv(results) if ext == "csv" else render_json(results)
    _write_atomic(result_path, text)
    manifest = {
        "config": config.to_dict(),
        "version": __version__,
        "finished_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "wall_clock_seconds": elapsed,
        "outputs": [os.path.basename(result_path)],
        "status": "ok",
    }
    manifest_path = os.path.join(config.output,
                                 f"{config.experiment}-{config.seed}-manifest.json")
    _write_atomic(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return [result_path, manifest_path]


# -- verify suites -----------------------------------------------------------


@dataclass
class _Check:
    name: str
    value: float
    bound: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.value <= self.bound


def _checks_expansion() -> list[_Check]:
    from .disorder import SeedPath, experiment_id, sample_couplings

    known = {(2, 1): 1, (3, 1): 1, (3, 2): -2, (4, 1): 1, (4, 2): -8}
    exact = max(abs(expansion_coefficient(m, a) - v) for (m, a), v in known.items())
    support = 0.0
    for m in range(1, 21):
        row = coefficient_row(m)
        tail = [row[0]] + row[(m + 1) // 2 + 1:]
        support = max(support, max(abs(c) for c in tail))
    worst = 0.0
    eid = experiment_id(101, "verify-expansion")
    for draw, law in enumerate((dis.gaussian(), dis.rademacher())):
        for n_sites in (2, 3):
            mspec = ModelSpec(n_sites, {2: 0.8}, 0.25)
            oracle = build_oracle(mspec, sample_couplings(
                mspec, law, SeedPath(eid, draw, n_sites).generator()))
            fns = [ex.spin_monomial(((0,),)).functional(n_sites, 1),
                   ex.overlap_square().functional(n_sites, 2)]
            for fn in fns:
                for m in range(1, 5):
                    lhs, rhs = verify_expansion(oracle, (0, min(1, n_sites - 1)), fn, m)
                    worst = max(worst, abs(lhs - rhs))
    return [_Check("coefficient-table-exact", exact, 0.0),
            _Check("coefficient-support", support, 0.0),
            _Check("derivative-expansion-residual", worst, 1e-9)]


def _checks_ibp() -> list[_Check]:
    rows = battery()
    residual = max(abs(r["residual"]) for r in rows)
    slack = min(r["envelope_slack"] for r in rows)
    gauss = max(abs(r["gamma"]) for r in rows if r["law"] == "gaussian")
    cube = [r for r in rows if r["law"] == "rademacher" and r["function"] == "cube"]
    cube_err = abs(cube[0]["gamma"] + 2.0) if cube else math.inf
    return [_Check("ibp-identity-residual", residual, 1e-8),
            _Check("ibp-envelope-violation", max(0.0, -slack), 1e-12),
            _Check("gaussian-remainder", gauss, 1e-8),
            _Check("rademacher-cube-remainder", cube_err, 1e-10)]


def _checks_cavity() -> list[_Check]:
    worst = 0.0
    for n_full, n_cavity, sets in ((4, 1, ((0,),)), (5, 2, ((0,), (0, 1)))):
        mspec = ModelSpec(n_full, {2: 0.8, 3: 0.4}, 0.25)
        got = ex.cavity_identity_check(mspec, dis.rademacher(), n_cavity, sets,
                                       realizations=10, seed=31)
        worst = max(worst, got["max_factor_residual"], got["product_residual"])
    return [_Check("cavity-identity-residual", worst, 1e-10)]


def _checks_gg() -> list[_Check]:
    from .disorder import SeedPath, experiment_id, sample_couplings

    worst = 0.0
    eid = experiment_id(57, "verify-gg")
    for r in range(10):
        mspec = ModelSpec(4, {2: 0.9}, 0.3)
        oracle = build_oracle(mspec, sample_couplings(
            mspec, dis.golden_skew(), SeedPath(eid, r, 0).generator()))
        for n in (2, 3):
            worst = max(worst,
                        abs(ex.gg_gap_realization(oracle, oracle, n, 2, ex.constant_one())),
                        abs(ex.gg_thermal_gap_realization(oracle, n, 2, ex.constant_one())))
    return [_Check("gg-exact-zero", worst, 1e-12)]


def _checks_universality() -> list[_Check]:
    mspec_free = ModelSpec(4, {2: 0.0}, 0.3)
    free = ex.universality_gap(mspec_free, dis.gaussian(), dis.rademacher(),
                               ex.overlap_square(), replicates=5, seed=5)
    mspec = ModelSpec(4, {2: 1.0}, 0.3)
    same = ex.universality_gap(mspec, dis.rademacher(), dis.rademacher(),
                               ex.overlap_square(), replicates=80, seed=5)
    margin = max(0.0, same.value - 4.0 * same.std_error)
    return [_Check("free-model-gap", free.value, 0.0),
            _Check("same-law-gap-4sigma", margin, 0.0)]


def _checks_vb() -> list[_Check]:
    from .disorder import SeedPath, experiment_id, sample_couplings, sample_vb

    mspec = ModelSpec(4, {2: 0.6}, 0.2)
    law = dis.rademacher()
    zero = ex.vb_logz_increment(mspec, law, 0.5, 0.0, replicates=10, seed=61)
    series_worst = 0.0
    rng = SeedPath(experiment_id(61, "verify-vb"), 0, 0).generator()
    for _ in range(20):
        n = int(rng.integers(1, 4))
        coeffs = rng.standard_normal(n + 2)
        b = float(rng.uniform(-1.0, 1.0))
        x = float(rng.uniform(-0.4, 0.4))
        got = series_identity_check(tuple(coeffs), b, x, n)
        series_worst = max(series_worst, got["residual"] - got["tail_bound"])
    worst_taylor = 0.0
    checks = ex.taylor_coefficient_check(mspec, law, 0.5, 0.5, 2, ex.overlap_square(),
                                         m_values=(1, 2), realizations=3, seed=61)
    for res in checks.values():
        worst_taylor = max(worst_taylor, res["pointwise"], res["averaged"])
    paired = ex.poisson_ibp_check(mspec, law, 0.5, 0.5, 2, ex.overlap_square(),
                                  replicates=150, seed=61)
    margin = max(0.0, abs(paired.value) - 4.0 * paired.std_error)
    return [_Check("vb-zero-coupling", abs(zero.value), 0.0),
            _Check("series-identity-residual", series_worst, 1e-12),
            _Check("taylor-coefficient-residual", worst_taylor, 1e-9),
            _Check("poisson-ibp-4sigma", margin, 0.0)]


_VERIFY = {
    "expansion": _checks_expansion,
    "ibp": _checks_ibp,
    "cavity": _checks_cavity,
    "gg": _checks_gg,
    "universality": _checks_universality,
    "vb": _checks_vb,
}


def run_verify(suite: str, output: str | None = None) -> int:
    checks = _VERIFY[suite]()
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status} {c.name}: {_fmt(c.value)} <= {_fmt(c.bound)}")
    if output is not None:
        results = [ex.EstimatorResult(f"verify-{suite}", c.value, 0.0, 1,
                                      {"check": c.name, "bound": c.bound, "seed": 0})
                   for c in checks]
        os.makedirs(output, exist_ok=True)
        path = os.path.join(output, f"verify-{suite}.csv")
        _write_atomic(path, render_csv(results))
        print(f"wrote {path}")
    return 0 if all(c.passed for c in checks) else NUMERIC_ERROR


# -- entry point -------------------------------------------------------------


def run_config_file(path: str, workers_override: int | None = None) -> int:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as err:
        print(f"error: cannot read config: {err}", file=sys.stderr)
        return USAGE_ERROR
    except json.JSONDecodeError as err:
        print(f"error: config is not valid JSON: {err}", file=sys.stderr)
        return USAGE_ERROR
    try:
        config = parse_config(raw)
        if workers_override is not None:
            config = dataclasses.replace(config, workers=workers_override)
        started = time.monotonic()
        results = _dispatch(config)
        paths = write_outputs(config, results, time.monotonic() - started)
    except (ConfigError, ModelValidationError, DisorderValidationError,
            ex.ExperimentError, ResourceCapError) as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    for row in result_rows(results):
        print(",".join(row))
    for p in paths:
        print(f"wrote {p}")
    if any(not math.isfinite(float(r.value)) for r in results):
        print("error: non-finite estimate in results", file=sys.stderr)
        return NUMERIC_ERROR
    return 0


def list_experiments() -> int:
    width = max(len(name) for name in _EXPERIMENTS)
    for name in sorted(_EXPERIMENTS):
        _, description = _EXPERIMENTS[name]
        print(f"{name:<{width}}  {description}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="pspinlab",
        description="Exact-oracle experiment runner for mixed p-spin models.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute one experiment from a JSON config")
    p_run.add_argument("config", help="path to the config file")
    p_run.add_argument("--workers", type=int, default=None,
                       help="worker processes (overrides config and PSPINLAB_WORKERS)")
    sub.add_parser("list", help="list available experiments")
    p_verify = sub.add_parser("verify", help="run a built-in check suite")
    p_verify.add_argument("suite", choices=VERIFY_SUITES)
    p_verify.add_argument("--output", default=None, help="directory for a results CSV")
    args = parser.parse_args(argv)
    if args.command == "list":
        return list_experiments()
    if args.command == "verify":
        return run_verify(args.suite, args.output)
    return run_config_file(args.config, args.workers)


if __name__ == "__main__":
    sys.exit(main())
