"""Run metrics: dynamic regret, cumulative constraint violation, consensus error.

Dynamic regret compares realized costs against the per-round optimal sequence
and may be negative early on (a moving comparator can transiently lose to the
learner); it is reported sign-preserving.  Cumulative violation applies the
positive-part projection to the time-accumulated coupling sum, not per round,
so later slack can cancel earlier overshoot.

The conservative network constants (worst-case push-sum floor and mixing rate)
blow up fast with the node count and window; they are reported as +inf with an
overflow flag when they leave float range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dust import Trajectory
from .oracle import RoundOptimum
from .problem import ProblemInstance, bound_constants

CSV_HEADER = "t,cum_regret,avg_regret,cum_violation,avg_violation,V_t,consensus_err,mu_bar_norm"

_LOG_FLOAT_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class TheoryConstants:
    """Closed-form worst-case constants for a given network size and window."""

    N: int
    p: int
    B: int
    a: float
    R: float
    F: float
    G: float
    r_lower: float
    sigma_upper: float
    B_y: float
    sensitivity: float
    overflow: bool


def constants_from(N: int, p: int, B: int, a: float, R: float, F: float, G: float) -> TheoryConstants:
    log_nnb = N * B * math.log(N)
    r_lower = math.exp(-log_nnb) if log_nnb < _LOG_FLOAT_MAX else 0.0
    # sigma = (1 - r)^(1/(NB)); keep 1 - sigma accurate for tiny r
    one_minus_sigma = -math.expm1(math.log1p(-r_lower) / (N * B)) if r_lower > 0 else 0.0
    sigma_upper = 1.0 - one_minus_sigma
    if r_lower > 0 and one_minus_sigma > 0:
        with np.errstate(over="ignore"):
            B_y = float(
                (8.0 * N**2 * F * math.sqrt(p) / r_lower) * (1.0 + 2.0 / one_minus_sigma)
                + (N + 2) * F
            )
        log_sens = 6.0 * math.log(N) + 3.0 * log_nnb - 3.0 * math.log(one_minus_sigma)
        sensitivity = math.exp(log_sens) if log_sens < _LOG_FLOAT_MAX else float("inf")
    else:
        B_y = float("inf")
        sensitivity = float("inf")
    overflow = not (math.isfinite(B_y) and math.isfinite(sensitivity) and r_lower > 0)
    return TheoryConstants(
        N=N, p=p, B=B, a=a, R=R, F=F, G=G,
        r_lower=r_lower, sigma_upper=sigma_upper, B_y=B_y, sensitivity=sensitivity,
        overflow=overflow,
    )


def theory_constants(inst: ProblemInstance, B: int, a: float | None = None) -> TheoryConstants:
    bounds = bound_constants(inst)
    floor = 1.0 / inst.N if a is None else a
    return constants_from(inst.N, inst.p, B, floor, bounds.R, bounds.F, bounds.G)


# ---------------------------------------------------------------------------
# series


def dynamic_regret(traj: Trajectory, optima: list[RoundOptimum]) -> np.ndarray:
    """Running sum of realized minus per-round-optimal cost; not clamped at zero."""
    if len(optima) < traj.T:
        raise ValueError(f"need optima for all {traj.T} rounds, got {len(optima)}")
    for s, opt in zip(traj.summaries, optima):
        if s.t != opt.t:
            raise ValueError(f"round mismatch: trajectory {s.t} vs optimum {opt.t}")
    gaps = traj.costs() - np.array([opt.value for opt in optima[: traj.T]])
    return np.cumsum(gaps)


def constraint_violation(traj: Trajectory) -> np.ndarray:
    """Norm of the positive part of the accumulated coupling sum, per round."""
    if traj.T == 0:
        raise ValueError("empty trajectory")
    accumulated = np.cumsum(traj.couplings(), axis=0)
    return np.linalg.norm(np.maximum(accumulated, 0.0), axis=1)


def variation_series(optima: list[RoundOptimum]) -> np.ndarray:
    """Running sqrt(t)-weighted path length; entry t needs optima up to t+1."""
    hops = []
    for idx in range(len(optima) - 1):
        t = optima[idx].t
        hop = sum(float(np.linalg.norm(b - a)) for a, b in zip(optima[idx].x, optima[idx + 1].x))
        hops.append(math.sqrt(t) * hop)
    return np.cumsum(hops)


@dataclass(frozen=True)
class ConsensusSeries:
    observed: np.ndarray
    envelope: np.ndarray


def consensus_diagnostics(traj: Trajectory, constants: TheoryConstants) -> ConsensusSeries:
    """Observed max-node dual consensus error next to its worst-case geometric envelope."""
    observed = np.array([s.consensus_err for s in traj.summaries])
    ts = np.arange(traj.T)
    if constants.overflow:
        envelope = np.full(traj.T, float("inf"))
        envelope[0] = 0.0
    else:
        prefactor = 8.0 * constants.N**2 * constants.B_y * math.sqrt(constants.p) / constants.r_lower
        with np.errstate(over="ignore"):
            envelope = prefactor * (1.0 - constants.sigma_upper**ts) / (1.0 - constants.sigma_upper)
    return ConsensusSeries(observed=observed, envelope=envelope)


# ---------------------------------------------------------------------------
# records and CSV


@dataclass(frozen=True)
class RunRecord:
    t: int
    cum_regret: float | None
    avg_regret: float | None
    cum_violation: float
    avg_violation: float
    V_t: float | None
    consensus_err: float
    mu_bar_norm: float


def build_run_records(traj: Trajectory, optima: list[RoundOptimum] | None = None) -> list[RunRecord]:
    """One record per round; regret and variation columns need the optima."""
    violation = constraint_violation(traj)
    regret = dynamic_regret(traj, optima) if optima is not None else None
    variation = variation_series(optima) if optima is not None and len(optima) > traj.T else None
    records = []
    for idx, s in enumerate(traj.summaries):
        t = s.t
        records.append(
            RunRecord(
                t=t,
                cum_regret=float(regret[idx]) if regret is not None else None,
                avg_regret=float(regret[idx]) / t if regret is not None else None,
                cum_violation=float(violation[idx]),
                avg_violation=float(violation[idx]) / t,
                V_t=float(variation[idx]) if variation is not None and idx < len(variation) else None,
                consensus_err=s.consensus_err,
                mu_bar_norm=s.mu_bar_norm,
            )
        )
    return records


def _cell(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_records_csv(records: list[RunRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            fh.write(
                ",".join(
                    [
                        str(r.t),
                        _cell(r.cum_regret),
                        _cell(r.avg_regret),
                        _cell(r.cum_violation),
                        _cell(r.avg_violation),
                        _cell(r.V_t),
                        _cell(r.consensus_err),
                        _cell(r.mu_bar_norm),
                    ]
                )
                + "\n"
            )


def read_records_csv(path) -> list[RunRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected header in {path}")
    records = []
    for line in lines[1:]:
        cells = line.split(",")
        parse = lambda c: None if c == "" else float(c)
        records.append(
            RunRecord(
                t=int(cells[0]),
                cum_regret=parse(cells[1]),
                avg_regret=parse(cells[2]),
                cum_violation=float(cells[3]),
                avg_violation=float(cells[4]),
                V_t=parse(cells[5]),
                consensus_err=float(cells[6]),
                mu_bar_norm=float(cells[7]),
            )
        )
    return records


def loglog_slope(ts, values) -> float:
    """Least-squares slope of log(values) against log(ts)."""
    ts = np.asarray(ts, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0) or np.any(ts <= 0):
        raise ValueError("log-log slope needs strictly positive samples")
    lx, ly = np.log(ts), np.log(values)
    lx = lx - lx.mean()
    return float((lx @ (ly - ly.mean())) / (lx @ lx))
