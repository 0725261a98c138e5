"""Iteration kernels for consensus optimization.

All kernels share one mutable SolverState and update it in place, returning
it for convenience.  Per-agent quantities are (N, M) arrays; per-arc
quantities are (2E, M) arrays in the topology's arc order.  Duals are stored
as one block delta per arc; the full multiplier is [delta; -delta], whose
symmetry is preserved by every update here.

The proximal ADMM kernel (``admm_consensus_iterate``) covers the whole
family: static or randomly activated graphs, exact or noisy gradients, and a
growing proximal schedule.  The remaining kernels are the single-variable
recursion equivalent to it on static graphs, a Nesterov-style accelerated
variant, and the mixing-matrix baselines it generalizes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AsymmetricWeights,
    DimensionMismatch,
    NotRowStochastic,
    RequiresStaticGraph,
    ScheduleViolation,
    UnsupportedProx,
)
from .graphs import ActivationDraw, GraphTopology, full_draw
from .objectives import ConsensusProblem, smooth_gradient
from .parameters import PenaltyConfig

__all__ = [
    "SolverState",
    "IterationInputs",
    "init_state",
    "admm_consensus_iterate",
    "dyspgc_iterate",
    "pgc_single_variable_iterate",
    "accelerated_iterate",
    "extra_iterate",
    "pg_extra_iterate",
    "dsg_iterate",
    "dual_stacked",
    "state_to_json",
    "state_from_json",
]

_STATE_FORMAT_VERSION = 1


@dataclass
class SolverState:
    """Full per-agent / per-arc iterate memory for any kernel."""

    iteration: int
    x: np.ndarray
    x_prev: np.ndarray
    z: np.ndarray
    delta: np.ndarray
    zeta: np.ndarray
    grad_prev: np.ndarray
    eta_prev: float = 0.0
    # single-variable recursion cache
    wsum_prev: np.ndarray | None = None
    # accelerated auxiliaries
    x_ag: np.ndarray | None = None
    z_ag: np.ndarray | None = None
    delta_ag: np.ndarray | None = None
    x_md: np.ndarray | None = None
    # correction-term running sum for the proximal mixing baseline
    accum: np.ndarray | None = None


@dataclass(frozen=True)
class IterationInputs:
    """Per-round inputs: activation draw (None means the full static graph),
    a gradient sample evaluated at the current iterate, and schedule values."""

    gradient: np.ndarray | None = None
    draw: ActivationDraw | None = None
    eta: float = 0.0
    nu: float = 1.0
    theta: float = 1.0
    gradient_fn: object = None   # callable (N, M) -> (N, M), for md-point kernels
    monotone_eta: bool = False


def init_state(problem: ConsensusProblem, topology: GraphTopology) -> SolverState:
    """All-zero initialization: x0 = 0, duals zero (so the stacked multiplier
    is symmetric), z0 = half the signless incidence sum of x0 = 0."""
    if problem.n_agents != topology.node_count:
        raise DimensionMismatch(
            f"problem has {problem.n_agents} agents but topology has "
            f"{topology.node_count} nodes")
    n, m = problem.n_agents, problem.dim
    two_e = topology.arc_count
    return SolverState(
        iteration=0,
        x=np.zeros((n, m)),
        x_prev=np.zeros((n, m)),
        z=np.zeros((two_e, m)),
        delta=np.zeros((two_e, m)),
        zeta=np.zeros((n, m)),
        grad_prev=np.zeros((n, m)),
    )


def admm_consensus_iterate(state: SolverState, inputs: IterationInputs,
                           problem: ConsensusProblem, penalties: PenaltyConfig,
                           zero_dual_in_x_step: bool = False) -> SolverState:
    """One proximal ADMM round over the (possibly partially active) graph.

    Active agents take a prox step on the penalty-weighted quadratic model;
    inactive agents and arcs freeze.  Active link variables move to the
    midpoint of their endpoints and active duals absorb the remaining
    disagreement.  With ``zero_dual_in_x_step`` the x-step ignores the duals,
    which reduces the update to the classical mixing + gradient form.
    """
    topo = penalties.topology
    draw = inputs.draw if inputs.draw is not None else full_draw(topo)
    if inputs.gradient is None:
        raise ValueError("admm_consensus_iterate needs a gradient sample")
    if inputs.monotone_eta and inputs.eta < state.eta_prev:
        raise ScheduleViolation(
            f"eta decreased from {state.eta_prev} to {inputs.eta} "
            f"at iteration {state.iteration}")

    arcs_on = draw.active_arcs
    nodes_on = draw.active_nodes
    eta = inputs.eta
    rho = penalties.rho_arc
    omega = penalties.omega
    tails_on = topo.tails[arcs_on]
    heads_on = topo.heads[arcs_on]
    rho_on = rho[arcs_on][:, None]

    n, m = state.x.shape
    coef = omega + eta
    np.add.at(coef, tails_on, rho[arcs_on])
    np.add.at(coef, heads_on, rho[arcs_on])

    pull = np.zeros((n, m))
    weighted_z = rho_on * state.z[arcs_on]
    np.add.at(pull, tails_on, weighted_z if zero_dual_in_x_step
              else weighted_z - state.delta[arcs_on])
    np.add.at(pull, heads_on, weighted_z if zero_dual_in_x_step
              else weighted_z + state.delta[arcs_on])

    x_old = state.x
    x_new = x_old.copy()
    act = np.flatnonzero(nodes_on)
    if act.size:
        u = (-inputs.gradient[act] + pull[act]
             + (omega[act] + eta)[:, None] * x_old[act]) / coef[act][:, None]
        x_new[act] = problem.nonsmooth.prox(u, coef[act], rows=act)

    z_vals = 0.5 * (x_new[tails_on] + x_new[heads_on])
    state.z[arcs_on] = z_vals
    state.delta[arcs_on] += rho_on * (x_new[tails_on] - z_vals)
    state.x_prev = x_old
    state.x = x_new
    state.eta_prev = eta
    state.iteration += 1
    return state


# The general kernel under its scenario names: over random graphs with noisy
# gradients this is the dynamic stochastic variant; with full activation,
# exact gradients and eta = 0 it is the static proximal-gradient consensus
# iteration.
dyspgc_iterate = admm_consensus_iterate


def _weighted_neighbor_sum(topo: GraphTopology, rho_hat: np.ndarray,
                           omega: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Node i gets sum_j rho_hat_ij x_j + (omega_i / 2) x_i."""
    out = 0.5 * omega[:, None] * x
    np.add.at(out, topo.tails, rho_hat[:, None] * x[topo.heads])
    return out


def pgc_single_variable_iterate(state: SolverState, problem: ConsensusProblem,
                                penalties: PenaltyConfig) -> SolverState:
    """Single-variable form of the static exact-gradient iteration.

    Keeps only per-agent memory (previous iterate, previous gradient, and a
    subgradient accumulator).  The first step starts from x0 = 0 with the
    previous gradient taken as zero, matching the ADMM-form trajectory.
    """
    topo = penalties.topology
    beta = penalties.beta[:, None]
    grad = smooth_gradient(problem, state.x)
    wsum = _weighted_neighbor_sum(topo, penalties.rho_hat_arc, penalties.omega,
                                  state.x)
    if state.iteration == 0:
        if np.any(state.x != 0.0):
            raise ValueError("single-variable form must start from x0 = 0")
        c = -grad / beta
    else:
        c = ((state.grad_prev - grad) / beta + (2.0 / beta) * wsum
             - 0.5 * state.x_prev - state.wsum_prev / beta)
    u = c + state.x + state.zeta / beta
    x_new = problem.nonsmooth.prox(u, penalties.beta)
    state.zeta = beta * (state.x + c - x_new) + state.zeta
    state.grad_prev = grad
    state.wsum_prev = wsum
    state.x_prev = state.x
    state.x = x_new
    state.iteration += 1
    return state


def _require_full_draw(draw: ActivationDraw | None, what: str) -> None:
    if draw is not None and not bool(np.all(draw.active_edges)):
        raise RequiresStaticGraph(f"{what} only runs on static graphs")


def accelerated_iterate(state: SolverState, inputs: IterationInputs,
                        problem: ConsensusProblem,
                        penalties: PenaltyConfig) -> SolverState:
    """Nesterov-style accelerated round on a static graph.

    The gradient is evaluated at the momentum midpoint, the proximal weight
    is shrunk by theta, and aggregate sequences average the primal-dual
    iterates with weight nu.  The step producing iterate r+1 should use
    nu = theta = 2/(r+2), so the first step has nu = 1 and the averaging
    degenerates.
    """
    _require_full_draw(inputs.draw, "the accelerated kernel")
    if inputs.monotone_eta and inputs.eta < state.eta_prev:
        raise ScheduleViolation(
            f"eta decreased from {state.eta_prev} to {inputs.eta} "
            f"at iteration {state.iteration}")
    topo = penalties.topology
    nu, theta, eta = inputs.nu, inputs.theta, inputs.eta
    if not (0.0 < nu <= 1.0 and 0.0 < theta <= 1.0):
        raise ValueError(f"nu and theta must lie in (0, 1], got {nu}, {theta}")
    if state.x_ag is None:
        state.x_ag = state.x.copy()
        state.z_ag = state.z.copy()
        state.delta_ag = np.zeros_like(state.delta)

    x_md = (1.0 - nu) * state.x_ag + nu * state.x
    if inputs.gradient_fn is not None:
        grad = inputs.gradient_fn(x_md)
    else:
        grad = smooth_gradient(problem, x_md)
    state.x_md = x_md

    rho = penalties.rho_arc
    omega = penalties.omega
    prox_weight = theta * omega + eta
    coef = prox_weight.copy()
    np.add.at(coef, topo.tails, rho)
    np.add.at(coef, topo.heads, rho)

    pull = np.zeros_like(state.x)
    weighted_z = rho[:, None] * state.z
    np.add.at(pull, topo.tails, weighted_z - state.delta)
    np.add.at(pull, topo.heads, weighted_z + state.delta)

    u = (-grad + pull + prox_weight[:, None] * state.x) / coef[:, None]
    x_new = problem.nonsmooth.prox(u, coef)
    z_new = 0.5 * (x_new[topo.tails] + x_new[topo.heads])
    state.delta += rho[:, None] * (x_new[topo.tails] - z_new)

    state.x_ag = (1.0 - nu) * state.x_ag + nu * x_new
    state.z_ag = (1.0 - nu) * state.z_ag + nu * z_new
    state.delta_ag = (1.0 - nu) * state.delta_ag + nu * state.delta
    state.x_prev = state.x
    state.x = x_new
    state.z = z_new
    state.eta_prev = eta
    state.iteration += 1
    return state


def _check_symmetric(w: np.ndarray) -> None:
    if np.max(np.abs(w - w.T)) > 1e-12:
        raise AsymmetricWeights("mixing matrix must be symmetric")


def extra_iterate(state: SolverState, w_hat: np.ndarray, w_tilde: np.ndarray,
                  upsilon: np.ndarray, problem: ConsensusProblem) -> SolverState:
    """Gradient-corrected mixing iteration for smooth objectives:
    x <- x + Upsilon^{-1}(G(x_prev) - G(x)) + W_hat x - W_tilde x_prev,
    with the first step x1 = W_tilde x0 - Upsilon^{-1} G(x0)."""
    if problem.nonsmooth.kind != "zero":
        raise UnsupportedProx("this kernel needs h = 0; use the proximal variant")
    _check_symmetric(w_hat)
    beta = np.asarray(upsilon, dtype=float)[:, None]
    grad = smooth_gradient(problem, state.x)
    if state.iteration == 0:
        x_new = w_tilde @ state.x - grad / beta
    else:
        x_new = (state.x + (state.grad_prev - grad) / beta
                 + w_hat @ state.x - w_tilde @ state.x_prev)
    state.grad_prev = grad
    state.x_prev = state.x
    state.x = x_new
    state.iteration += 1
    return state


def pg_extra_iterate(state: SolverState, w_hat: np.ndarray, w_tilde: np.ndarray,
                     upsilon: np.ndarray, problem: ConsensusProblem,
                     gradient: np.ndarray | None = None) -> SolverState:
    """Proximal variant of the gradient-corrected mixing iteration, in its
    accumulated form: x <- prox(-Upsilon^{-1} g + W_hat x + running correction
    sum).  Must start from x0 = 0.  An explicit (possibly noisy) gradient
    sample may be supplied; otherwise the exact gradient is used."""
    _check_symmetric(w_hat)
    if state.iteration == 0:
        if np.any(state.x != 0.0):
            raise ValueError("accumulated form must start from x0 = 0")
        state.accum = np.zeros_like(state.x)
    beta = np.asarray(upsilon, dtype=float)
    grad = gradient if gradient is not None else smooth_gradient(problem, state.x)
    u = w_hat @ state.x - grad / beta[:, None] + state.accum
    x_new = problem.nonsmooth.prox(u, beta)
    state.accum += (w_hat - w_tilde) @ state.x
    state.x_prev = state.x
    state.x = x_new
    state.iteration += 1
    return state


def dsg_iterate(state: SolverState, w_tilde: np.ndarray, gamma: float,
                direction: np.ndarray) -> SolverState:
    """Distributed (sub)gradient step x <- W_tilde x - gamma * direction.

    ``direction`` is the per-agent (stochastic sub)gradient of f_i at the
    current iterate, supplied by the driver.
    """
    w = np.asarray(w_tilde, dtype=float)
    if np.any(w < -1e-12) or np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-9:
        raise NotRowStochastic("mixing matrix rows must be nonnegative and sum to 1")
    if gamma <= 0:
        raise ValueError(f"stepsize must be positive, got {gamma}")
    x_new = w @ state.x - gamma * direction
    state.x_prev = state.x
    state.x = x_new
    state.iteration += 1
    return state


def dual_stacked(state: SolverState) -> np.ndarray:
    """The full multiplier [delta; -delta] as a (4E, M) array."""
    return np.vstack([state.delta, -state.delta])


_ARRAY_FIELDS = ("x", "x_prev", "z", "delta", "zeta", "grad_prev")
_OPTIONAL_ARRAY_FIELDS = ("wsum_prev", "x_ag", "z_ag", "delta_ag", "x_md", "accum")


def state_to_json(state: SolverState) -> str:
    """Versioned checkpoint blob for resume."""
    doc = {"version": _STATE_FORMAT_VERSION,
           "iteration": state.iteration,
           "eta_prev": state.eta_prev}
    for name in _ARRAY_FIELDS:
        doc[name] = getattr(state, name).tolist()
    for name in _OPTIONAL_ARRAY_FIELDS:
        value = getattr(state, name)
        doc[name] = None if value is None else value.tolist()
    return json.dumps(doc)


def state_from_json(text: str) -> SolverState:
    doc = json.loads(text)
    if doc.get("version") != _STATE_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    kwargs = {"iteration": int(doc["iteration"]),
              "eta_prev": float(doc["eta_prev"])}
    for name in _ARRAY_FIELDS:
        kwargs[name] = np.asarray(doc[name], dtype=float)
    state = SolverState(**kwargs)
    for name in _OPTIONAL_ARRAY_FIELDS:
        if doc.get(name) is not None:
            setattr(state, name, np.asarray(doc[name], dtype=float))
    return state
