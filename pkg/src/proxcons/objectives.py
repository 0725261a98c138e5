"""Composite per-agent objectives g_i + h_i, gradient oracles, the prox
library, LASSO instance generation, and the centralized reference solver.

Agent stacks are (N, M) arrays throughout: row i is agent i's copy.  Smooth
parts are least-squares losses g_i(y) = 0.5 ||A_i y - b_i||^2, which cover
both the benchmark instances and the random quadratics used in tests.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, UnsupportedProx

__all__ = [
    "ConsensusProblem",
    "NonsmoothPart",
    "StochasticSample",
    "ReferenceSolution",
    "make_problem",
    "generate_lasso",
    "smooth_gradient",
    "stochastic_gradient",
    "prox",
    "objective_value",
    "stacked_objective",
    "reference_optimum",
    "spectral_norm_sq",
    "save_instance",
    "load_instance",
    "instance_hash",
    "cached_reference",
]


@dataclass(frozen=True)
class NonsmoothPart:
    """Per-agent nonsmooth terms with closed-form prox operators.

    Supported families: "zero", "l1" (weights[i] * ||y||_1), and "ball"
    (indicator of the l2 ball of the given radius).
    """

    kind: str
    weights: np.ndarray | None = None
    radius: float | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "l1", "ball"):
            raise UnsupportedProx(f"no prox registered for family {self.kind!r}")
        if self.kind == "l1" and self.weights is None:
            raise UnsupportedProx("l1 family needs per-agent weights")
        if self.kind == "ball" and (self.radius is None or self.radius <= 0):
            raise UnsupportedProx("ball family needs a positive radius")

    def prox(self, u: np.ndarray, beta, rows=None) -> np.ndarray:
        """Batched prox: argmin_y h_i(y) + (beta_i/2)||y - u_i||^2 per row.

        ``u`` is (n, M); ``beta`` is a scalar or (n,) of positive weights.
        When ``u`` covers only a subset of agents, ``rows`` gives their
        indices so per-agent l1 weights line up.
        """
        beta = np.asarray(beta, dtype=float)
        if np.any(beta <= 0):
            raise ValueError("prox weight beta must be positive")
        if self.kind == "zero":
            return u.copy()
        if self.kind == "l1":
            weights = self.weights if rows is None else self.weights[rows]
            thr = np.broadcast_to(np.atleast_1d(weights / beta),
                                  (u.shape[0],))[:, None]
            return np.sign(u) * np.maximum(np.abs(u) - thr, 0.0)
        # ball: projection, independent of beta
        norms = np.linalg.norm(u, axis=-1, keepdims=True)
        scale = np.minimum(1.0, self.radius / np.maximum(norms, 1e-300))
        return u * scale

    def value(self, x_stack: np.ndarray) -> float:
        """sum_i h_i(x_i) over the stack (infinite outside the ball)."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "l1":
            return float(np.sum(self.weights * np.abs(x_stack).sum(axis=-1)))
        norms = np.linalg.norm(x_stack, axis=-1)
        return 0.0 if np.all(norms <= self.radius * (1 + 1e-12)) else float("inf")

    def value_common(self, y: np.ndarray) -> float:
        """sum_i h_i(y) at a common point."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "l1":
            return float(self.weights.sum() * np.abs(y).sum())
        return 0.0 if np.linalg.norm(y) <= self.radius * (1 + 1e-12) else float("inf")

    def prox_common(self, v: np.ndarray, beta: float) -> np.ndarray:
        """Prox of the aggregated term sum_i h_i at a common point."""
        if self.kind == "zero":
            return v.copy()
        if self.kind == "l1":
            thr = float(self.weights.sum()) / beta
            return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)
        nrm = np.linalg.norm(v)
        return v if nrm <= self.radius else v * (self.radius / nrm)

    def subgradient(self, x_stack: np.ndarray) -> np.ndarray:
        """A subgradient selection per agent (used by subgradient baselines)."""
        if self.kind == "zero":
            return np.zeros_like(x_stack)
        if self.kind == "l1":
            return self.weights[:, None] * np.sign(x_stack)
        raise UnsupportedProx("no subgradient selection for the ball indicator")


@dataclass(frozen=True)
class ConsensusProblem:
    """N agents, each owning g_i(y) = 0.5||A_i y - b_i||^2 plus h_i."""

    design: np.ndarray          # (N, K, M)
    targets: np.ndarray         # (N, K)
    nonsmooth: NonsmoothPart
    lipschitz: np.ndarray       # (N,) spectral norms of A_i A_i^T
    regularizer: str = ""

    @property
    def n_agents(self) -> int:
        return self.design.shape[0]

    @property
    def dim(self) -> int:
        return self.design.shape[2]

    def smooth_value_stack(self, x: np.ndarray) -> float:
        r = np.matmul(self.design, x[..., None])[..., 0] - self.targets
        return 0.5 * float(np.sum(r * r))

    def smooth_value_common(self, y: np.ndarray) -> float:
        r = self.design @ y - self.targets
        return 0.5 * float(np.sum(r * r))

    def smooth_gradient_common(self, y: np.ndarray) -> np.ndarray:
        r = self.design @ y - self.targets
        return np.einsum("nkm,nk->m", self.design, r)


def make_problem(design, targets, nonsmooth: NonsmoothPart | None = None,
                 regularizer: str = "") -> ConsensusProblem:
    """Assemble a problem from per-agent least-squares data, computing the
    Lipschitz constants."""
    design = np.asarray(design, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if design.ndim != 3 or targets.shape != design.shape[:2]:
        raise DimensionMismatch(
            f"design {design.shape} and targets {targets.shape} do not align")
    if nonsmooth is None:
        nonsmooth = NonsmoothPart(kind="zero")
    lips = np.array([spectral_norm_sq(design[i]) for i in range(design.shape[0])])
    return ConsensusProblem(design=design, targets=targets, nonsmooth=nonsmooth,
                            lipschitz=lips, regularizer=regularizer)


def spectral_norm_sq(a: np.ndarray, tol: float = 1e-10, max_iters: int = 10000) -> float:
    """Largest eigenvalue of A A^T (the squared spectral norm of A) by power
    iteration on the smaller Gram matrix."""
    k, m = a.shape
    gram = a @ a.T if k <= m else a.T @ a
    d = gram.shape[0]
    v = np.ones(d) + 1e-3 * np.arange(d)  # deterministic, non-symmetric start
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam_new = float(v @ (gram @ v))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    return lam


def smooth_gradient(problem: ConsensusProblem, x: np.ndarray) -> np.ndarray:
    """Stacked gradient of the smooth parts: row i is grad g_i(x_i)."""
    if x.shape != (problem.n_agents, problem.dim):
        raise DimensionMismatch(
            f"expected stack of shape {(problem.n_agents, problem.dim)}, got {x.shape}")
    r = np.matmul(problem.design, x[..., None])[..., 0] - problem.targets
    return np.matmul(problem.design.transpose(0, 2, 1), r[..., None])[..., 0]


@dataclass(frozen=True)
class StochasticSample:
    """One draw of the noisy gradient oracle."""

    estimate: np.ndarray
    noise: np.ndarray
    sigma2: float


def stochastic_gradient(problem: ConsensusProblem, x: np.ndarray, sigma2: float,
                        rng: np.random.Generator) -> StochasticSample:
    """Unbiased gradient estimate with E||noise_i||^2 = sigma2 per agent.

    Noise is i.i.d. Gaussian per coordinate with variance sigma2 / M, so the
    per-agent second moment matches the contract exactly; sigma2 = 0 returns
    the exact gradient without consuming randomness.
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    grad = smooth_gradient(problem, x)
    if sigma2 == 0.0:
        return StochasticSample(estimate=grad, noise=np.zeros_like(grad), sigma2=0.0)
    tau = rng.standard_normal(grad.shape) * np.sqrt(sigma2 / problem.dim)
    return StochasticSample(estimate=grad + tau, noise=tau, sigma2=sigma2)


def prox(h: NonsmoothPart, beta, u: np.ndarray, agent: int = 0) -> np.ndarray:
    """Prox of a single h_i (1-D input, for the given agent) or of the whole
    stack (2-D input)."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        single = h
        if h.kind == "l1":
            single = NonsmoothPart(kind="l1", weights=h.weights[agent:agent + 1])
        return single.prox(u[None, :], float(beta))[0]
    return h.prox(u, beta)


def objective_value(problem: ConsensusProblem, y: np.ndarray) -> float:
    """f(y) = sum_i g_i(y) + h_i(y) at a common point."""
    y = np.asarray(y, dtype=float)
    if y.shape != (problem.dim,):
        raise DimensionMismatch(f"expected point of shape ({problem.dim},), got {y.shape}")
    return problem.smooth_value_common(y) + problem.nonsmooth.value_common(y)


def stacked_objective(problem: ConsensusProblem, x: np.ndarray) -> float:
    """sum_i [g_i(x_i) + h_i(x_i)] over a stack of per-agent copies."""
    if x.shape != (problem.n_agents, problem.dim):
        raise DimensionMismatch(
            f"expected stack of shape {(problem.n_agents, problem.dim)}, got {x.shape}")
    return problem.smooth_value_stack(x) + problem.nonsmooth.value(x)


def generate_lasso(n_agents: int, dim: int, rows: int, nu: float,
                   rng: np.random.Generator) -> ConsensusProblem:
    """Random LASSO benchmark instance.

    Per agent, A_i = L_i Q_i with L_i ~ Uniform[0, 10] and Q_i standard
    Gaussian (rows x dim); targets b_i = A_i c + d_i with c carrying 5% of
    nonzeros at uniform positions (standard Gaussian values) and d_i Gaussian
    with standard deviation 0.01.  The l1 weight nu is split equally, so each
    agent carries (nu / N) ||y||_1.
    """
    if min(n_agents, dim, rows) < 1 or nu < 0:
        raise ValueError("need n_agents, dim, rows >= 1 and nu >= 0")
    scales = rng.uniform(0.0, 10.0, size=n_agents)
    design = scales[:, None, None] * rng.standard_normal((n_agents, rows, dim))
    n_nonzero = int(np.ceil(0.05 * dim))
    support = rng.choice(dim, size=n_nonzero, replace=False)
    ground_truth = np.zeros(dim)
    ground_truth[support] = rng.standard_normal(n_nonzero)
    noise = 0.01 * rng.standard_normal((n_agents, rows))
    targets = design @ ground_truth + noise

    if nu > 0:
        h = NonsmoothPart(kind="l1", weights=np.full(n_agents, nu / n_agents))
        label = f"l1(nu={nu})"
    else:
        h = NonsmoothPart(kind="zero")
        label = "none"
    return make_problem(design, targets, nonsmooth=h, regularizer=label)


@dataclass(frozen=True)
class ReferenceSolution:
    """Centralized minimizer used as ground truth for accuracy metrics."""

    minimizer: np.ndarray
    value: float
    residual: float
    converged: bool
    iterations: int


def _fixed_point_residual(problem: ConsensusProblem, y: np.ndarray, lip: float) -> float:
    step = y - problem.smooth_gradient_common(y) / lip
    return float(np.linalg.norm(y - problem.nonsmooth.prox_common(step, lip)))


def reference_optimum(problem: ConsensusProblem, tol: float = 1e-10,
                      max_iters: int = 100000) -> ReferenceSolution:
    """Accelerated proximal gradient (with adaptive restart) on the
    centralized problem min_y sum_i g_i(y) + h_i(y).

    Stops when the prox-gradient fixed-point residual falls below ``tol``;
    otherwise returns the best iterate with ``converged=False``.
    """
    lip = float(problem.lipschitz.sum())
    if lip <= 0:
        raise ValueError("problem has no curvature; nothing to solve")
    x = np.zeros(problem.dim)
    y = x.copy()
    t = 1.0
    it = 0
    check_every = 10
    for it in range(1, max_iters + 1):
        grad = problem.smooth_gradient_common(y)
        x_new = problem.nonsmooth.prox_common(y - grad / lip, lip)
        # adaptive restart: drop momentum when it points uphill
        if np.dot(y - x_new, x_new - x) > 0:
            t = 1.0
            y = x.copy()
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if it % check_every == 0 or np.linalg.norm(x_new - y) == 0.0:
            if _fixed_point_residual(problem, x, lip) <= tol:
                break
    residual = _fixed_point_residual(problem, x, lip)
    return ReferenceSolution(
        minimizer=x,
        value=objective_value(problem, x),
        residual=residual,
        converged=residual <= tol,
        iterations=it,
    )


def save_instance(problem: ConsensusProblem, path) -> None:
    """Binary dump of the instance (design, targets, regularizer spec)."""
    extra = {}
    if problem.nonsmooth.kind == "l1":
        extra["h_weights"] = problem.nonsmooth.weights
    if problem.nonsmooth.kind == "ball":
        extra["h_radius"] = np.array(problem.nonsmooth.radius)
    np.savez_compressed(
        path,
        design=problem.design,
        targets=problem.targets,
        h_kind=np.array(problem.nonsmooth.kind),
        regularizer=np.array(problem.regularizer),
        **extra,
    )


def load_instance(path) -> ConsensusProblem:
    with np.load(path, allow_pickle=False) as data:
        kind = str(data["h_kind"])
        if kind == "l1":
            h = NonsmoothPart(kind="l1", weights=data["h_weights"])
        elif kind == "ball":
            h = NonsmoothPart(kind="ball", radius=float(data["h_radius"]))
        else:
            h = NonsmoothPart(kind="zero")
        return make_problem(data["design"], data["targets"], nonsmooth=h,
                            regularizer=str(data["regularizer"]))


def instance_hash(problem: ConsensusProblem) -> str:
    digest = hashlib.sha256()
    digest.update(problem.design.tobytes())
    digest.update(problem.targets.tobytes())
    digest.update(problem.nonsmooth.kind.encode())
    if problem.nonsmooth.kind == "l1":
        digest.update(problem.nonsmooth.weights.tobytes())
    if problem.nonsmooth.kind == "ball":
        digest.update(np.float64(problem.nonsmooth.radius).tobytes())
    return digest.hexdigest()[:16]


def cached_reference(problem: ConsensusProblem, cache_dir,
                     tol: float = 1e-10, max_iters: int = 100000) -> ReferenceSolution:
    """Disk-cached reference solve keyed by the instance hash, so reruns skip
    the iterative solver."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = instance_hash(problem)
    path = cache_dir / f"ref-{key}-tol{tol:.0e}.npz"
    if path.exists():
        with np.load(path) as data:
            if float(data["tol"]) <= tol and bool(data["converged"]):
                return ReferenceSolution(
                    minimizer=data["minimizer"],
                    value=float(data["value"]),
                    residual=float(data["residual"]),
                    converged=True,
                    iterations=int(data["iterations"]),
                )
    sol = reference_optimum(problem, tol=tol, max_iters=max_iters)
    np.savez_compressed(path, minimizer=sol.minimizer, value=sol.value,
                        residual=sol.residual, converged=sol.converged,
                        iterations=sol.iterations, tol=tol)
    return sol
