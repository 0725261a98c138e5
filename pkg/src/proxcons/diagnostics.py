"""Progress metrics, ergodic averages, and empirical rate slopes."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NonpositiveMetric, ZeroOptimum
from .graphs import IncidenceSet
from .objectives import ConsensusProblem, objective_value, stacked_objective

__all__ = [
    "TraceRecord",
    "CSV_COLUMNS",
    "accuracy",
    "accuracy_worst",
    "consensus_error",
    "optimality_gap",
    "RunningAverage",
    "rate_slope",
    "write_trace_csv",
    "read_trace_csv",
]

CSV_COLUMNS = ("r", "accuracy", "consensus_error", "gap", "residual",
               "active_nodes", "active_edges", "eta", "seconds")


@dataclass(frozen=True)
class TraceRecord:
    """One logged iteration of a run.  ``gap`` and ``residual`` are None for
    kernels that do not carry link variables."""

    r: int
    accuracy: float
    consensus_error: float
    gap: float | None
    residual: float | None
    active_nodes: int
    active_edges: int
    eta: float
    seconds: float


def accuracy(problem: ConsensusProblem, x_stack: np.ndarray, f_star: float) -> float:
    """Relative objective error |f(mean iterate) - f*| / f*."""
    if f_star <= 0:
        raise ZeroOptimum(f"relative accuracy needs f* > 0, got {f_star}")
    center = x_stack.mean(axis=0)
    return abs(objective_value(problem, center) - f_star) / f_star


def accuracy_worst(problem: ConsensusProblem, x_stack: np.ndarray,
                   f_star: float) -> float:
    """Worst per-agent relative objective error."""
    if f_star <= 0:
        raise ZeroOptimum(f"relative accuracy needs f* > 0, got {f_star}")
    vals = [abs(objective_value(problem, x_stack[i]) - f_star)
            for i in range(x_stack.shape[0])]
    return max(vals) / f_star


def consensus_error(x_stack: np.ndarray) -> float:
    """sqrt(sum_i ||x_i - mean||^2) / N."""
    n = x_stack.shape[0]
    center = x_stack.mean(axis=0)
    return float(np.sqrt(np.sum((x_stack - center) ** 2)) / n)


def optimality_gap(problem: ConsensusProblem, x_bar: np.ndarray,
                   z_bar: np.ndarray, rho: float, f_star: float,
                   incidence: IncidenceSet) -> float:
    """Multiplier-free progress measure on (ergodic) averages:
    f(x_bar) - f* + rho * ||A x_bar + B z_bar||, with f the stacked
    per-agent objective."""
    if rho < 0:
        raise ValueError("report weight rho must be nonnegative")
    feas = incidence.constraint_residual(x_bar, z_bar)
    return stacked_objective(problem, x_bar) - f_star + rho * feas


class RunningAverage:
    """Online ergodic mean of the primal iterates; no history retained."""

    def __init__(self):
        self.count = 0
        self.x = None
        self.z = None

    def update(self, x: np.ndarray, z: np.ndarray | None = None) -> None:
        if self.count == 0:
            self.x = x.copy()
            self.z = None if z is None else z.copy()
        else:
            w = self.count / (self.count + 1.0)
            self.x = w * self.x + x / (self.count + 1.0)
            if z is not None:
                self.z = w * self.z + z / (self.count + 1.0)
        self.count += 1


def rate_slope(trace, metric: str, window: tuple[float, float]) -> float:
    """Least-squares slope of log(metric) against log(r) over the window.

    ``trace`` is a sequence of TraceRecord (or anything with ``r`` and the
    named attribute).  Iterations with r <= 0 are excluded; the metric must
    be strictly positive on the window.
    """
    lo, hi = window
    rs, vals = [], []
    for rec in trace:
        r = getattr(rec, "r")
        if lo <= r <= hi and r > 0:
            v = getattr(rec, metric)
            if v is None or not np.isfinite(v) or v <= 0:
                raise NonpositiveMetric(
                    f"metric {metric!r} is not positive at r={r} (value {v})")
            rs.append(r)
            vals.append(v)
    if len(rs) < 2:
        raise NonpositiveMetric(
            f"window [{lo}, {hi}] holds {len(rs)} usable points; need >= 2")
    coeffs = np.polyfit(np.log(np.asarray(rs, float)), np.log(np.asarray(vals)), 1)
    return float(coeffs[0])


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, col)) for col in CSV_COLUMNS])


def read_trace_csv(path) -> list[TraceRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(CSV_COLUMNS):
            raise ValueError(f"unexpected trace header in {path}: {reader.fieldnames}")
        for row in reader:
            out.append(TraceRecord(
                r=int(row["r"]),
                accuracy=float(row["accuracy"]),
                consensus_error=float(row["consensus_error"]),
                gap=float(row["gap"]) if row["gap"] else None,
                residual=float(row["residual"]) if row["residual"] else None,
                active_nodes=int(row["active_nodes"]),
                active_edges=int(row["active_edges"]),
                eta=float(row["eta"]),
                seconds=float(row["seconds"]),
            ))
    return out
