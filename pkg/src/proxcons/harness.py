"""End-to-end experiment driver: instance generation, kernel selection,
seeding, scenario presets, trace logging, and multi-run comparison.

Randomness is split into four independent streams (instance, topology,
activation, gradient noise) so ablations vary one source at a time; the
activation and noise streams are derived per repetition seed, keeping a
dynamic run with all-active links bit-identical to its static counterpart.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from . import diagnostics, solvers
from .diagnostics import RunningAverage, TraceRecord, rate_slope, read_trace_csv, write_trace_csv
from .errors import ConfigError, GridMismatch, NumericalFailure, UnknownPreset
from .graphs import (
    GraphTopology,
    activation_model,
    build_topology,
    incidence_matrices,
    random_geometric_graph,
    sample_activation,
)
from .objectives import (
    ConsensusProblem,
    cached_reference,
    generate_lasso,
    load_instance,
    smooth_gradient,
    stochastic_gradient,
)
from .parameters import (
    check_condition,
    dlm_tight_omega,
    metropolis_weights,
    penalty_config,
    schedules,
    uniform_beta_for_weights,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "KERNELS",
    "scenario_preset",
    "PRESET_NAMES",
    "run_experiment",
    "compare_runs",
    "config_from_json",
    "config_to_json",
]

log = logging.getLogger("proxcons")

OUTPUT_DIR_ENV = "PROXCONS_OUT"


@dataclass(frozen=True)
class KernelTraits:
    supports_activation: bool
    supports_noise: bool
    smooth_only: bool
    has_links: bool  # carries z/delta, so gap and residual are defined


KERNELS: dict[str, KernelTraits] = {
    "dyspgc": KernelTraits(True, True, False, True),
    "pgc": KernelTraits(False, False, False, True),
    "pgc-sv": KernelTraits(False, False, False, False),
    "accelerated": KernelTraits(False, True, False, True),
    "extra": KernelTraits(False, False, True, False),
    "pg-extra": KernelTraits(False, True, False, False),
    "dlm": KernelTraits(False, False, True, True),
    "dsg": KernelTraits(False, False, False, False),
    "dsgd": KernelTraits(False, True, False, False),
}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run.  See CONFIG_SCHEMA for the JSON
    form; unspecified fields take the defaults here."""

    instance: dict
    topology: dict
    kernel: str = "pgc"
    activation: object = "static"      # "static" | {"p": scalar or {"i-j": p}}
    penalty: dict = field(default_factory=lambda: {"rho": 1000.0, "omega": "lipschitz"})
    sigma2: float = 0.0
    eta0: float = 0.0
    iterations: int = 1000
    log_every: int = 10
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str | None = None
    gap_rho: object = "auto"
    name: str | None = None
    workers: int = 1
    reference_tol: float = 1e-10
    dsg_step: dict = field(default_factory=lambda: {"a": 0.01, "b": 5000.0})


CONFIG_SCHEMA = {
    "type": "object",
    "required": ["instance", "topology", "kernel"],
    "additionalProperties": False,
    "properties": {
        "instance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_agents": {"type": "integer", "minimum": 1},
                "dim": {"type": "integer", "minimum": 1},
                "rows": {"type": "integer", "minimum": 1},
                "nu": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"},
                "file": {"type": "string"},
            },
        },
        "topology": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["geometric", "edges"]},
                "n": {"type": "integer", "minimum": 1},
                "radius": {"type": "number"},
                "seed": {"type": "integer"},
                "edges": {"type": "array",
                          "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                    "items": {"type": "integer"}}},
            },
            "required": ["kind"],
        },
        "kernel": {"enum": sorted(KERNELS)},
        "activation": {
            "oneOf": [
                {"const": "static"},
                {"type": "object", "required": ["p"], "additionalProperties": False,
                 "properties": {"p": {"oneOf": [
                     {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                     {"type": "object",
                      "additionalProperties": {"type": "number", "exclusiveMinimum": 0,
                                               "maximum": 1}},
                 ]}}},
            ]
        },
        "penalty": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rho": {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                                  {"type": "object",
                                   "additionalProperties": {"type": "number"}}]},
                "omega": {"oneOf": [{"enum": ["half-lipschitz", "lipschitz", "dlm-tight"]},
                                    {"type": "number", "minimum": 0},
                                    {"type": "array", "items": {"type": "number"}}]},
            },
        },
        "sigma2": {"type": "number", "minimum": 0},
        "eta0": {"type": "number", "minimum": 0},
        "iterations": {"type": "integer", "minimum": 1},
        "log_every": {"type": "integer", "minimum": 1},
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "output_dir": {"type": ["string", "null"]},
        "gap_rho": {"oneOf": [{"const": "auto"}, {"type": "number", "minimum": 0}]},
        "name": {"type": ["string", "null"]},
        "workers": {"type": "integer", "minimum": 1},
        "reference_tol": {"type": "number", "exclusiveMinimum": 0},
        "dsg_step": {"type": "object", "additionalProperties": False,
                     "properties": {"a": {"type": "number", "exclusiveMinimum": 0},
                                    "b": {"type": "number", "minimum": 0}}},
    },
}


def config_to_json(config: ExperimentConfig) -> str:
    return json.dumps(asdict(config), indent=2, sort_keys=True)


def config_from_json(text: str) -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"not valid JSON: {exc}") from exc
    if jsonschema is not None:
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(path, exc.message) from exc
    try:
        config = ExperimentConfig(**doc)
    except TypeError as exc:
        raise ConfigError("<root>", str(exc)) from exc
    validate_config(config)
    return config


def validate_config(config: ExperimentConfig) -> None:
    """Cross-field rules that the JSON schema cannot express."""
    if config.kernel not in KERNELS:
        raise ConfigError("kernel", f"unknown kernel {config.kernel!r}")
    traits = KERNELS[config.kernel]
    dynamic = config.activation != "static"
    if dynamic and not traits.supports_activation:
        raise ConfigError("activation",
                          f"kernel {config.kernel!r} requires a static graph")
    if config.sigma2 > 0 and not traits.supports_noise:
        raise ConfigError("sigma2",
                          f"kernel {config.kernel!r} requires exact gradients")
    if traits.smooth_only and config.instance.get("nu", 0.0) != 0.0:
        raise ConfigError("instance.nu",
                          f"kernel {config.kernel!r} needs a smooth objective (nu = 0)")
    if "file" not in config.instance:
        for key in ("n_agents", "dim", "rows", "nu", "seed"):
            if key not in config.instance:
                raise ConfigError(f"instance.{key}", "missing (or give instance.file)")
    topo = config.topology
    if topo["kind"] == "geometric":
        for key in ("n", "radius", "seed"):
            if key not in topo:
                raise ConfigError(f"topology.{key}", "required for geometric topology")
    else:
        for key in ("n", "edges"):
            if key not in topo:
                raise ConfigError(f"topology.{key}", "required for explicit topology")


# ---------------------------------------------------------------------------
# Presets

_PAPER_INSTANCE = {"n_agents": 16, "dim": 1000, "rows": 200, "seed": 101}
_PAPER_TOPOLOGY = {"kind": "geometric", "n": 16, "radius": 0.4, "seed": 7}
_DESK_DIMS = {"n_agents": 8, "dim": 50, "rows": 10}
_DESK_TOPOLOGY = {"kind": "geometric", "n": 8, "radius": 0.6, "seed": 7}
_DESK_RHO = 50.0
_DESK_ETA0 = 500.0
_DESK_ITERS = 5000


def _base_presets() -> dict[str, ExperimentConfig]:
    presets: dict[str, ExperimentConfig] = {}
    presets["case1"] = ExperimentConfig(
        instance=dict(_PAPER_INSTANCE, nu=0.1),
        topology=dict(_PAPER_TOPOLOGY),
        kernel="pgc",
        penalty={"rho": 1000.0, "omega": "lipschitz"},
        iterations=2000,
        log_every=10,
        name="case1",
    )
    presets["case2"] = ExperimentConfig(
        instance=dict(_PAPER_INSTANCE, rows=50, nu=50.0),
        topology=dict(_PAPER_TOPOLOGY),
        kernel="pgc",
        penalty={"rho": 1000.0, "omega": "lipschitz"},
        iterations=2000,
        log_every=10,
        name="case2",
    )
    presets["smooth"] = ExperimentConfig(
        instance=dict(_PAPER_INSTANCE, nu=0.0),
        topology=dict(_PAPER_TOPOLOGY),
        kernel="pgc",
        penalty={"rho": 1000.0, "omega": "lipschitz"},
        iterations=2000,
        log_every=10,
        name="smooth",
    )
    for sigma2 in (0.1, 10.0):
        presets[f"spgc-sigma{sigma2:g}"] = ExperimentConfig(
            instance=dict(_PAPER_INSTANCE, nu=0.1),
            topology=dict(_PAPER_TOPOLOGY),
            kernel="dyspgc",
            penalty={"rho": 1000.0, "omega": "half-lipschitz"},
            sigma2=sigma2,
            eta0=2500.0,
            iterations=10000,
            log_every=20,
            name=f"spgc-sigma{sigma2:g}",
        )
    for p in (1.0, 0.5, 0.2):
        presets[f"dynamic-p{p:g}"] = ExperimentConfig(
            instance=dict(_PAPER_INSTANCE, nu=0.1),
            topology=dict(_PAPER_TOPOLOGY),
            kernel="dyspgc",
            activation={"p": p},
            penalty={"rho": 1000.0, "omega": "half-lipschitz"},
            sigma2=0.1,
            eta0=2500.0,
            iterations=10000,
            log_every=20,
            name=f"dynamic-p{p:g}",
        )
    return presets


def _desk_variant(config: ExperimentConfig) -> ExperimentConfig:
    """Shrink a preset to CI scale: small dims, same regularizer and kernels,
    penalties rescaled to the smaller curvature."""
    inst = dict(config.instance)
    inst.update(_DESK_DIMS)
    scaled = ExperimentConfig(
        instance=inst,
        topology=dict(_DESK_TOPOLOGY),
        kernel=config.kernel,
        activation=config.activation,
        penalty=dict(config.penalty, rho=_DESK_RHO),
        sigma2=config.sigma2,
        eta0=_DESK_ETA0 if config.eta0 > 0 else 0.0,
        iterations=min(config.iterations, _DESK_ITERS),
        log_every=10,
        name=f"{config.name}-desk",
    )
    return scaled


PRESET_NAMES = tuple(sorted(_base_presets())
                     + sorted(f"{k}-desk" for k in _base_presets()))


def scenario_preset(name: str) -> ExperimentConfig:
    """Named experiment configurations mirroring the benchmark scenarios,
    each with a small "-desk" variant for CI."""
    presets = _base_presets()
    if name in presets:
        return presets[name]
    if name.endswith("-desk") and name[:-5] in presets:
        return _desk_variant(presets[name[:-5]])
    raise UnknownPreset(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


# ---------------------------------------------------------------------------
# Run driver

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    traces: dict
    csv_paths: dict
    summary: dict
    summary_path: str | None


def _build_topology(spec: dict) -> GraphTopology:
    if spec["kind"] == "geometric":
        rng = np.random.default_rng(np.random.SeedSequence(spec["seed"]))
        return random_geometric_graph(spec["n"], spec["radius"], rng)
    return build_topology(spec["n"], [tuple(e) for e in spec["edges"]])


def _build_instance(spec: dict) -> ConsensusProblem:
    if "file" in spec:
        return load_instance(spec["file"])
    rng = np.random.default_rng(np.random.SeedSequence(spec["seed"]))
    return generate_lasso(spec["n_agents"], spec["dim"], spec["rows"],
                          spec["nu"], rng)


def _activation_probs(activation, topology: GraphTopology):
    if activation == "static":
        return None
    p = activation["p"]
    if isinstance(p, dict):
        parsed = {}
        for key, val in p.items():
            i, j = key.split("-")
            parsed[(int(i), int(j))] = float(val)
        return activation_model(topology, parsed)
    return activation_model(topology, float(p))


def _condition_variants(kernel: str, dynamic: bool, sigma2: float) -> list[str]:
    if kernel == "accelerated":
        return ["accelerated"]
    if dynamic:
        return ["random-stochastic"] if sigma2 > 0 else ["random-exact",
                                                         "random-exact-rate"]
    if sigma2 > 0:
        return ["static-stochastic"]
    return ["static-exact", "static-rate"]


def _gap_rho_value(gap_rho, delta: np.ndarray) -> float:
    if gap_rho == "auto":
        peak = float(np.max(np.abs(delta))) if delta.size else 0.0
        return 10.0 * (1.0 + peak)
    return float(gap_rho)


def _run_single(problem, topology, penalties, act_model, config, seed, f_star,
                incidence):
    """One repetition; returns (trace records, worst final per-agent accuracy)."""
    kernel = config.kernel
    traits = KERNELS[kernel]
    sigma2 = config.sigma2
    act_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    rng_act = np.random.default_rng(act_ss)
    rng_noise = np.random.default_rng(noise_ss)

    state = solvers.init_state(problem, topology)
    averages = RunningAverage()
    topo_n, topo_e = topology.node_count, topology.edge_count

    # mixing-matrix baselines share the Metropolis weights
    if kernel in ("extra", "pg-extra", "dsg", "dsgd"):
        w = metropolis_weights(topology)
        w_tilde = 0.5 * (np.eye(topo_n) + w)
        beta_uniform = uniform_beta_for_weights(w, problem.lipschitz)
        upsilon = np.full(topo_n, beta_uniform)

    records: list[TraceRecord] = []
    start = time.perf_counter()
    mode = "stochastic" if sigma2 > 0 else "exact"
    for r in range(config.iterations):
        draw = sample_activation(act_model, rng_act) if act_model is not None else None
        try:
            if kernel in ("dyspgc", "pgc", "dlm"):
                g = stochastic_gradient(problem, state.x, sigma2, rng_noise).estimate
                eta, _, _ = schedules(r, mode, config.eta0)
                inputs = solvers.IterationInputs(gradient=g, draw=draw, eta=eta,
                                                 monotone_eta=sigma2 > 0)
                solvers.admm_consensus_iterate(state, inputs, problem, penalties)
            elif kernel == "pgc-sv":
                solvers.pgc_single_variable_iterate(state, problem, penalties)
                eta = 0.0
            elif kernel == "accelerated":
                eta, nu, theta = schedules(r + 1, "accelerated", config.eta0)
                inputs = solvers.IterationInputs(gradient_fn=sample_grad, eta=eta,
                                                 nu=nu, theta=theta)
                solvers.accelerated_iterate(state, inputs, problem, penalties)
            elif kernel == "extra":
                solvers.extra_iterate(state, w, w_tilde, upsilon, problem)
                eta = 0.0
            elif kernel == "pg-extra":
                g = stochastic_gradient(problem, state.x, sigma2, rng_noise).estimate
                solvers.pg_extra_iterate(state, w, w_tilde, upsilon, problem,
                                         gradient=g)
                eta = 0.0
            else:  # dsg / dsgd
                g = stochastic_gradient(problem, state.x, sigma2, rng_noise).estimate
                direction = g + problem.nonsmooth.subgradient(state.x)
                gamma = config.dsg_step["a"] / (r + config.dsg_step["b"])
                solvers.dsg_iterate(state, w_tilde, gamma, direction)
                eta = 0.0
        except FloatingPointError as exc:
            raise NumericalFailure(f"kernel {kernel!r} failed at iteration {r}: "
                                   f"{exc}") from exc

        averages.update(state.x, state.z if traits.has_links else None)

        if (r + 1) % config.log_every == 0 or r + 1 == config.iterations:
            acc = diagnostics.accuracy(problem, state.x, f_star)
            cons = diagnostics.consensus_error(state.x)
            if not np.isfinite(acc) or not np.isfinite(cons):
                raise NumericalFailure(
                    f"kernel {kernel!r} produced non-finite metrics at iteration "
                    f"{r + 1} (accuracy={acc}, consensus={cons})")
            if traits.has_links:
                rho_rep = _gap_rho_value(config.gap_rho, state.delta)
                gap = diagnostics.optimality_gap(problem, averages.x, averages.z,
                                                 rho_rep, f_star, incidence)
                residual = incidence.constraint_residual(state.x, state.z)
            else:
                gap = None
                residual = None
            if draw is not None:
                active_nodes, active_edges = draw.node_count, draw.edge_count
            else:
                active_nodes, active_edges = topo_n, topo_e
            records.append(TraceRecord(
                r=r + 1, accuracy=acc, consensus_error=cons, gap=gap,
                residual=residual, active_nodes=active_nodes,
                active_edges=active_edges, eta=eta,
                seconds=time.perf_counter() - start,
            ))
    return records


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run all repetitions of a configured experiment; returns traces and, if
    an output directory is set (or the PROXCONS_OUT env var), writes one CSV
    per repetition plus a summary JSON."""
    validate_config(config)
    problem = _build_instance(config.instance)
    topology = _build_topology(config.topology)
    if problem.n_agents != topology.node_count:
        raise ConfigError("topology.n", "instance and topology disagree on N")
    act_model = _activation_probs(config.activation, topology)
    incidence = incidence_matrices(topology, problem.dim)

    penalty = dict(config.penalty)
    if penalty.get("omega") == "dlm-tight":
        penalty["omega"] = dlm_tight_omega(topology, float(penalty["rho"]),
                                           problem.lipschitz)
    penalties = penalty_config(topology, penalty["rho"], penalty["omega"],
                               lipschitz=problem.lipschitz)

    out_dir = config.output_dir or os.environ.get(OUTPUT_DIR_ENV)
    cache_dir = Path(out_dir) / "refcache" if out_dir else Path(".proxcons-cache")
    reference = cached_reference(problem, cache_dir, tol=config.reference_tol)
    if not reference.converged:
        log.warning("reference solve stopped at residual %.3e before tolerance",
                    reference.residual)

    dynamic = act_model is not None
    verdicts = [check_condition(penalties, topology, problem.lipschitz, v)
                for v in _condition_variants(config.kernel, dynamic, config.sigma2)]
    for verdict in verdicts:
        if not verdict.holds:
            log.warning("convergence condition %s fails (margin %.3e); "
                        "running anyway", verdict.name, verdict.margin)

    name = config.name or config.kernel
    traces: dict[int, list[TraceRecord]] = {}
    csv_paths: dict[int, str] = {}
    seeds = list(config.seeds)

    def _one(seed: int):
        return seed, _run_single(problem, topology, penalties, act_model, config,
                                 seed, reference.value, incidence)

    if config.workers > 1 and len(seeds) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            for seed, recs in pool.map(_one, seeds):
                traces[seed] = recs
    else:
        for seed in seeds:
            traces[seed] = _one(seed)[1]

    summary = {
        "name": name,
        "kernel": config.kernel,
        "config": asdict(config),
        "f_star": reference.value,
        "reference": {"residual": reference.residual,
                      "iterations": reference.iterations,
                      "converged": reference.converged},
        "conditions": [asdict(v) for v in verdicts],
        "per_seed": {},
    }
    for seed, recs in traces.items():
        final = recs[-1]
        summary["per_seed"][str(seed)] = {
            "final_accuracy": final.accuracy,
            "final_consensus_error": final.consensus_error,
            "min_accuracy": min(rec.accuracy for rec in recs),
            "final_accuracy_worst": None,
            "seconds": final.seconds,
        }

    summary_path = None
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for seed, recs in traces.items():
            path = out / f"{name}-seed{seed}.csv"
            write_trace_csv(path, recs)
            csv_paths[seed] = str(path)
            summary["per_seed"][str(seed)]["csv"] = str(path)
        summary_path = str(out / f"{name}-summary.json")
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)

    return ExperimentResult(config=config, traces=traces, csv_paths=csv_paths,
                            summary=summary, summary_path=summary_path)


# ---------------------------------------------------------------------------
# Trace comparison

def compare_runs(paths, threshold: float = 1e-4,
                 slope_window: tuple[float, float] | None = None) -> list[dict]:
    """Tabulate final metrics, iterations-to-threshold, and empirical gap
    slopes for traces sharing one iteration grid."""
    if len(paths) < 2:
        raise GridMismatch("need at least two traces to compare")
    traces = {str(p): read_trace_csv(p) for p in paths}
    grids = [tuple(rec.r for rec in recs) for recs in traces.values()]
    if len(set(grids)) != 1:
        raise GridMismatch("traces do not share a common iteration grid")

    rows = []
    for path, recs in traces.items():
        final = recs[-1]
        hit = next((rec.r for rec in recs if rec.accuracy < threshold), None)
        row = {
            "trace": Path(path).name,
            "final_r": final.r,
            "final_accuracy": final.accuracy,
            "final_consensus_error": final.consensus_error,
            "iters_to_threshold": hit,
        }
        window = slope_window or (max(recs[0].r, final.r // 10), final.r)
        try:
            row["gap_slope"] = rate_slope(recs, "gap", window)
        except Exception:
            row["gap_slope"] = None
        rows.append(row)
    return rows


def comparison_markdown(rows: list[dict]) -> str:
    cols = ["trace", "final_r", "final_accuracy", "final_consensus_error",
            "iters_to_threshold", "gap_slope"]
    head = "| " + " | ".join(cols) + " |"
    sep = "| " + " | ".join("---" for _ in cols) + " |"
    body = []
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c)
            if v is None:
                cells.append("-")
            elif isinstance(v, float):
                cells.append(f"{v:.6g}")
            else:
                cells.append(str(v))
        body.append("| " + " | ".join(cells) + " |")
    return "\n".join([head, sep] + body) + "\n"


def comparison_csv(rows: list[dict]) -> str:
    cols = ["trace", "final_r", "final_accuracy", "final_consensus_error",
            "iters_to_threshold", "gap_slope"]
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join("" if row.get(c) is None else str(row.get(c))
                              for c in cols))
    return "\n".join(lines) + "\n"
