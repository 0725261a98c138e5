"""Penalty/weight/stepsize constructions, weight-matrix translations, and
convergence-condition checks.

All condition matrices have the form (N x N matrix) Kronecker identity, so
eigenvalue tests reduce to the N x N factor regardless of the block size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AsymmetricWeights,
    NonpositiveRho,
    NotDoublyStochastic,
    NotRowStochastic,
)
from .graphs import GraphTopology

__all__ = [
    "PenaltyConfig",
    "ConditionVerdict",
    "penalty_config",
    "check_condition",
    "CONDITION_VARIANTS",
    "weights_to_penalties",
    "metropolis_weights",
    "schedules",
    "uniform_beta_for_weights",
    "dlm_tight_omega",
]


@dataclass(frozen=True)
class PenaltyConfig:
    """Per-arc penalties, per-agent proximal weights, and everything derived
    from them: symmetrized penalties, stepsizes beta_i, and the induced
    row-stochastic weight matrix."""

    topology: GraphTopology
    rho_arc: np.ndarray      # (2E,) penalty per arc, > 0
    omega: np.ndarray        # (N,) proximal weight per agent, >= 0
    rho_hat_arc: np.ndarray  # (2E,) symmetrized: (rho_q + rho_mirror) / 2
    beta: np.ndarray         # (N,) stepsize parameters
    weights: np.ndarray      # (N, N) induced weight matrix W

    def xi(self) -> np.ndarray:
        """Diagonal of the per-arc penalty matrix, in arc order."""
        return self.rho_arc.copy()

    def gamma_dense(self, block_size: int = 1) -> np.ndarray:
        """Dense block-diagonal penalty over both constraint halves (4EM)."""
        xi = np.kron(np.diag(self.rho_arc), np.eye(block_size))
        out = np.zeros((2 * xi.shape[0], 2 * xi.shape[1]))
        out[:xi.shape[0], :xi.shape[1]] = xi
        out[xi.shape[0]:, xi.shape[1]:] = xi
        return out

    def upsilon_dense(self, block_size: int = 1) -> np.ndarray:
        return np.kron(np.diag(self.beta), np.eye(block_size))

    def signless_reduced(self) -> np.ndarray:
        """N x N factor of the penalty-weighted signless Laplacian
        M+ (Xi kron I) M+^T."""
        n = self.topology.node_count
        s = np.zeros((n, n))
        for q, (i, j) in enumerate(self.topology.arcs):
            w = self.rho_arc[q]
            s[i, i] += w
            s[j, j] += w
            s[i, j] += w
            s[j, i] += w
        return s

    def quadratic_reduced(self) -> np.ndarray:
        """N x N factor of 2 Omega + M+ (Xi kron I) M+^T, which also equals
        Upsilon (W + I) by construction."""
        return 2.0 * np.diag(self.omega) + self.signless_reduced()


def _resolve_rho(topology: GraphTopology, rho) -> np.ndarray:
    two_e = topology.arc_count
    if np.isscalar(rho):
        out = np.full(two_e, float(rho))
    elif isinstance(rho, dict):
        out = np.empty(two_e)
        for q, (i, j) in enumerate(topology.arcs):
            if (i, j) in rho:
                out[q] = rho[(i, j)]
            elif (j, i) in rho:
                out[q] = rho[(j, i)]
            else:
                raise NonpositiveRho(f"no penalty for arc ({i},{j})")
    else:
        arr = np.asarray(rho, dtype=float)
        if arr.shape == (two_e,):
            out = arr.copy()
        elif arr.shape == (topology.edge_count,):
            out = np.concatenate([arr, arr])
        else:
            raise NonpositiveRho(
                f"expected scalar, per-edge ({topology.edge_count},) or per-arc "
                f"({two_e},) penalties, got shape {arr.shape}")
    if np.any(out <= 0.0):
        raise NonpositiveRho("all penalties must be positive")
    return out


def _resolve_omega(topology: GraphTopology, omega, lipschitz) -> np.ndarray:
    n = topology.node_count
    if isinstance(omega, str):
        if lipschitz is None:
            raise ValueError(f"omega rule {omega!r} needs Lipschitz constants")
        lips = np.asarray(lipschitz, dtype=float)
        if omega == "half-lipschitz":
            return lips / 2.0
        if omega == "lipschitz":
            return lips.copy()
        raise ValueError(f"unknown omega rule {omega!r}")
    if np.isscalar(omega):
        out = np.full(n, float(omega))
    else:
        out = np.asarray(omega, dtype=float)
        if out.shape != (n,):
            raise ValueError(f"expected {n} proximal weights, got shape {out.shape}")
        out = out.copy()
    if np.any(out < 0.0):
        raise ValueError("proximal weights must be nonnegative")
    return out


def penalty_config(topology: GraphTopology, rho, omega,
                   lipschitz=None) -> PenaltyConfig:
    """Materialize all derived penalty quantities.

    ``rho`` is a scalar, per-edge/per-arc array, or arc-keyed map; ``omega``
    is an array, scalar, or one of the rules "half-lipschitz" / "lipschitz"
    (which require the per-agent Lipschitz constants).
    """
    rho_arc = _resolve_rho(topology, rho)
    omega_vec = _resolve_omega(topology, omega, lipschitz)
    rho_hat = 0.5 * (rho_arc + rho_arc[topology.reverse_arc])

    n = topology.node_count
    beta = omega_vec.copy()
    # beta_i = sum_j (rho_ij + rho_ji) + omega_i: each arc q credits rho_q to
    # both of its endpoints.
    np.add.at(beta, topology.tails, rho_arc)
    np.add.at(beta, topology.heads, rho_arc)

    weights = np.zeros((n, n))
    for q, (i, j) in enumerate(topology.arcs):
        weights[i, j] += rho_arc[q] / beta[i]
        weights[j, i] += rho_arc[q] / beta[j]
    weights[np.arange(n), np.arange(n)] = omega_vec / beta
    return PenaltyConfig(topology=topology, rho_arc=rho_arc, omega=omega_vec,
                         rho_hat_arc=rho_hat, beta=beta, weights=weights)


CONDITION_VARIANTS = (
    "static-exact",
    "static-rate",
    "static-stochastic",
    "random-exact",
    "random-exact-rate",
    "random-stochastic",
    "accelerated",
)


@dataclass(frozen=True)
class ConditionVerdict:
    """Result of one convergence-condition test."""

    name: str
    holds: bool
    margin: float


def check_condition(config: PenaltyConfig, topology: GraphTopology,
                    lipschitz, variant: str, tol: float = 1e-10) -> ConditionVerdict:
    """Test the convergence condition for the given scenario.

    The margin is the smallest eigenvalue of the tested matrix difference;
    strict positive definiteness is read as margin > tol.
    """
    if variant not in CONDITION_VARIANTS:
        raise ValueError(f"unknown condition variant {variant!r}; "
                         f"choose from {CONDITION_VARIANTS}")
    lips = np.diag(np.asarray(lipschitz, dtype=float))
    om = np.diag(config.omega)
    s = config.signless_reduced()
    if variant == "static-exact":
        diff = 2.0 * om + s - lips
    elif variant in ("static-rate", "static-stochastic"):
        diff = 2.0 * om + s - 2.0 * lips
    elif variant == "random-exact":
        diff = 2.0 * om - lips
    elif variant in ("random-exact-rate", "random-stochastic"):
        diff = om - lips
    else:  # accelerated
        diff = 4.0 * om + s - 4.0 * lips
    margin = float(np.linalg.eigvalsh(diff)[0])
    return ConditionVerdict(name=variant, holds=margin > tol, margin=margin)


def metropolis_weights(topology: GraphTopology) -> np.ndarray:
    """Symmetric doubly stochastic mixing weights: 1/(1 + max degree) per
    edge, remainder on the diagonal."""
    n = topology.node_count
    deg = topology.degrees()
    w = np.zeros((n, n))
    for i, j in topology.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    w[np.arange(n), np.arange(n)] = 1.0 - w.sum(axis=1)
    return w


def _validate_weight_matrix(w: np.ndarray, tol: float = 1e-9) -> None:
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise AsymmetricWeights(f"weight matrix must be square, got {w.shape}")
    if np.max(np.abs(w - w.T)) > 1e-12:
        raise AsymmetricWeights("weight matrix is not symmetric")
    if np.any(w < -tol) or np.max(np.abs(w.sum(axis=1) - 1.0)) > tol:
        raise NotRowStochastic("rows must be nonnegative and sum to one")
    if np.max(np.abs(w.sum(axis=0) - 1.0)) > tol:
        raise NotDoublyStochastic("columns must sum to one")


def weights_to_penalties(w: np.ndarray, beta: float) -> tuple[dict, np.ndarray]:
    """Split a symmetric doubly stochastic weight matrix into per-arc
    penalties and per-agent proximal weights at a common stepsize beta.

    Only the sums rho_ij + rho_ji = beta W[i,j] are pinned down; the split is
    equal.  Round trip: every beta_i recovered from the penalties equals beta.
    """
    w = np.asarray(w, dtype=float)
    _validate_weight_matrix(w)
    if np.any(np.diag(w) <= 0):
        raise NotRowStochastic("diagonal weights must be positive")
    n = w.shape[0]
    rho = {}
    for i in range(n):
        for j in range(n):
            if i != j and w[i, j] > 0:
                rho[(i, j)] = beta * w[i, j] / 2.0
    omega = beta * np.diag(w).copy()
    return rho, omega


def uniform_beta_for_weights(w: np.ndarray, lipschitz, slack: float = 1e-6) -> float:
    """Smallest scalar stepsize parameter compatible with the sufficient
    condition beta * lambda_min(I + W) > max_i P_i (plus a relative slack)."""
    lam = float(np.linalg.eigvalsh(np.eye(w.shape[0]) + w)[0])
    if lam <= 0:
        raise NotRowStochastic("I + W must be positive definite")
    return float(np.max(lipschitz)) / lam * (1.0 + slack)


def dlm_tight_omega(topology: GraphTopology, rho: float, lipschitz) -> float:
    """Uniform proximal weight that makes the uniform-penalty convergence
    condition tight: omega = max(0, max_i P_i / 2 - rho * lambda_min of the
    halved unweighted signless Laplacian)."""
    n = topology.node_count
    s = np.zeros((n, n))
    for i, j in topology.edges:
        s[i, i] += 1.0
        s[j, j] += 1.0
        s[i, j] += 1.0
        s[j, i] += 1.0
    lam = float(np.linalg.eigvalsh(s)[0])
    return max(0.0, float(np.max(lipschitz)) / 2.0 - rho * lam)


def schedules(r: int, mode: str, eta0: float = 1.0) -> tuple[float, float, float]:
    """Iteration-dependent parameters (eta_{r+1}, nu_r, theta_r).

    Modes: "exact" keeps eta at zero; "stochastic" grows eta like
    eta0 * sqrt(r+1); "accelerated" additionally sets the averaging and
    proximal-shrink factors nu_r = theta_r = 2/(r+1), clamped to 1 at r = 0.
    """
    if r < 0:
        raise ValueError("iteration index must be nonnegative")
    if mode == "exact":
        return 0.0, 1.0, 1.0
    if mode == "stochastic":
        return eta0 * float(np.sqrt(r + 1.0)), 1.0, 1.0
    if mode == "accelerated":
        nu = min(1.0, 2.0 / (r + 1.0))
        return eta0 * float(np.sqrt(r + 1.0)), nu, nu
    raise ValueError(f"unknown schedule mode {mode!r}")
