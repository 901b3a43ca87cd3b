"""Centralized reference solvers for the per-round coupled problem.

The per-round problem minimizes the sum of strongly convex quadratic blocks
subject to the coupled affine inequality and the local sets.  For a fixed
multiplier the block minimizers are closed-form projections, so the dual is
maximized by projected ascent on the multiplier with diminishing steps.  The
resulting per-round optima feed dynamic-regret and optimal-sequence-variation
calculations; a clairvoyant full-information dual subgradient recursion is
kept as a tiny-scale test baseline.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .problem import ProblemInstance

_MIN_CURVATURE = 1e-9


@dataclass(frozen=True)
class RoundOptimum:
    """Primal-dual certificate for one round's centralized problem."""

    t: int
    x: tuple[np.ndarray, ...]
    value: float
    mu: np.ndarray
    kkt_residual: float
    converged: bool
    iterations: int
    dual_values: tuple[float, ...] | None = None


def _quadratic_coefficients(inst: ProblemInstance, t: int) -> list[tuple[float, np.ndarray]]:
    if not hasattr(inst.costs, "coefficients"):
        raise ValueError(f"cost family {getattr(inst.costs, 'kind', '?')!r} has no closed-form block minimizer")
    coeffs = [inst.costs.coefficients(i, t) for i in range(inst.N)]
    for a, _ in coeffs:
        if a < _MIN_CURVATURE:
            raise ValueError(f"round {t} cost is not strongly convex (curvature {a!r})")
    return coeffs


def _block_minimizers(inst: ProblemInstance, coeffs, mu: np.ndarray) -> tuple[np.ndarray, ...]:
    return tuple(
        inst.sets[i].project(-(b + inst.constraints[i].A.T @ mu) / a)
        for i, (a, b) in enumerate(coeffs)
    )


def _kkt_residual(coupling: np.ndarray, mu: np.ndarray) -> float:
    primal = float(np.linalg.norm(np.maximum(coupling, 0.0)))
    slack = abs(float(mu @ coupling)) / (1.0 + float(np.linalg.norm(mu)))
    return max(primal, slack)


def solve_round(
    inst: ProblemInstance,
    t: int,
    tol: float = 1e-6,
    max_iter: int = 20_000,
    rho0: float = 1.0,
    mu0: np.ndarray | None = None,
    collect_dual_values: bool = False,
) -> RoundOptimum:
    """Dual ascent with steps rho0/sqrt(k); stops at the KKT tolerance or the cap.

    Block stationarity holds exactly by construction, so the reported residual
    combines primal feasibility of the coupling and complementary slackness.
    Returns the iterate with the smallest residual seen.
    """
    coeffs = _quadratic_coefficients(inst, t)
    mu = np.zeros(inst.p) if mu0 is None else np.array(mu0, dtype=float)
    if mu.shape != (inst.p,) or np.any(mu < 0):
        raise ValueError("mu0 must be a nonnegative p-vector")
    best = None
    dual_values: list[float] = []
    iterations = 0
    for k in range(1, max_iter + 1):
        iterations = k
        xs = _block_minimizers(inst, coeffs, mu)
        coupling = inst.coupling_at(xs)
        if collect_dual_values:
            lagrangian = inst.cost_at(t, xs) + float(mu @ coupling)
            dual_values.append(lagrangian)
        residual = _kkt_residual(coupling, mu)
        if best is None or residual < best[0]:
            best = (residual, xs, mu.copy())
        if residual <= tol:
            break
        mu = np.maximum(mu + (rho0 / np.sqrt(k)) * coupling, 0.0)
    residual, xs, mu = best
    return RoundOptimum(
        t=t,
        x=xs,
        value=inst.cost_at(t, xs),
        mu=mu,
        kkt_residual=residual,
        converged=residual <= tol,
        iterations=iterations,
        dual_values=tuple(dual_values) if collect_dual_values else None,
    )


@dataclass(frozen=True)
class ClairvoyantStep:
    t: int
    x: tuple[np.ndarray, ...]
    coupling: np.ndarray
    mu: np.ndarray


def clairvoyant_dual_subgradient(
    inst: ProblemInstance, T: int, step: float = 1.0, mu0: np.ndarray | None = None
) -> list[ClairvoyantStep]:
    """Full-information dual recursion: minimize the next round's Lagrangian, then
    take a projected multiplier step along the realized coupling.

    Only a test baseline; it peeks at the upcoming cost, which no online node can.
    """
    mu = np.zeros(inst.p) if mu0 is None else np.array(mu0, dtype=float)
    steps: list[ClairvoyantStep] = []
    for t in range(1, T + 1):
        coeffs = _quadratic_coefficients(inst, t + 1)
        xs = _block_minimizers(inst, coeffs, mu)
        coupling = inst.coupling_at(xs)
        mu = np.maximum(mu + step * coupling, 0.0)
        steps.append(ClairvoyantStep(t=t + 1, x=xs, coupling=coupling, mu=mu.copy()))
    return steps


def accumulated_variation(optima: list[RoundOptimum]) -> float:
    """sqrt(t)-weighted path length of the optimal sequence over rounds 1..T+1."""
    if len(optima) < 2:
        raise ValueError("need optima for rounds 1..T+1 with T >= 1")
    for idx, opt in enumerate(optima):
        if opt.t != optima[0].t + idx:
            raise ValueError("optima rounds must be consecutive")
    total = 0.0
    for idx in range(len(optima) - 1):
        t = optima[idx].t
        hop = sum(
            float(np.linalg.norm(b - a)) for a, b in zip(optima[idx].x, optima[idx + 1].x)
        )
        total += np.sqrt(t) * hop
    return total


class OptimaCache:
    """Thread-safe insert-or-get cache of per-round optima keyed by instance and round."""

    def __init__(self) -> None:
        self._data: dict[tuple, RoundOptimum] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._data)

    def get(self, key: tuple) -> RoundOptimum | None:
        with self._lock:
            return self._data.get(key)

    def insert(self, key: tuple, value: RoundOptimum) -> RoundOptimum:
        with self._lock:
            return self._data.setdefault(key, value)


def compute_optima(
    inst: ProblemInstance,
    T: int,
    tol: float = 1e-6,
    max_iter: int = 20_000,
    cache: OptimaCache | None = None,
) -> list[RoundOptimum]:
    """Per-round optima for rounds 1..T, computed in order with warm-started duals.

    Warm starts follow the round chain from t = 1, so results are a pure
    function of (instance, T, tol) and safe to reuse across parameter sweeps.
    """
    out: list[RoundOptimum] = []
    prev_mu: np.ndarray | None = None
    for t in range(1, T + 1):
        key = (inst.key, t, tol)
        hit = cache.get(key) if cache is not None and inst.key is not None else None
        if hit is None:
            hit = solve_round(inst, t, tol=tol, max_iter=max_iter, mu0=prev_mu)
            if cache is not None and inst.key is not None:
                hit = cache.insert(key, hit)
        out.append(hit)
        prev_mu = hit.mu
    return out
