"""Synchronous round engine for dual subgradient tracking over directed graphs.

Each node holds a primal point inside its local set, a tracker y estimating the
network-wide coupling value, a nonnegative local dual, and a push-sum weight c
that absorbs the imbalance of column-stochastic mixing.  One round, in order:

1. mix the push-sum weights,
2. form the ratio-corrected dual (mixed duals over the new weight),
3. take a proximal linearized primal step penalized by the corrected dual,
4. mix the trackers and add the local coupling increment,
5. mix the duals, add the tracker, and clip at zero.

All mixing sums read the round-t snapshot; nothing is updated in place during
a round.  Because mixing matrices are column stochastic, the tracker sum equals
the true coupling sum and the push-sum weights sum to N at every round; both
identities are recomputed each round and exposed as diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import GraphSequence, MixingMatrix
from .problem import AffineConstraint, FeasibleSet, ProblemInstance

INIT_KINDS = ("zero_projected", "seeded_random_in_set", "feasible_point")


class DustError(RuntimeError):
    """Engine failure; carries the round index where it occurred."""

    def __init__(self, message: str, round_index: int | None = None):
        super().__init__(message if round_index is None else f"round {round_index}: {message}")
        self.round_index = round_index


class MixingError(DustError):
    pass


class NumericError(DustError):
    pass


class ConvergenceError(DustError):
    pass


@dataclass(frozen=True)
class StepSchedule:
    """Power-law step pair: alpha weights the cost linearization, eta the proximal pull.

    Defaults are alpha_t = sqrt(t), eta_t = t.  Constants are the pow = 0 case.
    """

    alpha_pow: float = 0.5
    alpha_scale: float = 1.0
    eta_pow: float = 1.0
    eta_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.alpha_scale <= 0 or self.eta_scale <= 0:
            raise ValueError("step scales must be positive")
        if self.eta_pow < 0:
            raise ValueError("eta must be nondecreasing (eta_pow >= 0)")

    def alpha(self, t: int) -> float:
        return self.alpha_scale * t**self.alpha_pow

    def eta(self, t: int) -> float:
        return self.eta_scale * t**self.eta_pow


@dataclass
class SwarmState:
    """Snapshot of all node variables at the start of round t.

    ``lam`` is the ratio-corrected dual computed while producing this state; it
    is zeros at t = 1 (nothing has been mixed yet) and is kept for logging.
    ``g`` caches each node's coupling value at its current point.
    ``dual_step_slack`` is max_i(||mu_new - mixed_mu|| - ||y_new||) from the
    round that produced this state; the clipped dual step can never move
    farther than the tracker, so it stays <= 0 up to roundoff.
    """

    t: int
    x: tuple[np.ndarray, ...]
    y: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    c: np.ndarray
    g: np.ndarray
    dual_step_slack: float = 0.0

    @property
    def n_nodes(self) -> int:
        return len(self.x)

    @property
    def coupling(self) -> np.ndarray:
        return self.g.sum(axis=0)

    @property
    def mu_bar(self) -> np.ndarray:
        return self.mu.mean(axis=0)


def initialize(inst: ProblemInstance, init_kind: str = "zero_projected", seed: int = 0) -> SwarmState:
    """Round-1 state: unit push-sum weights, zero duals, trackers at local coupling values."""
    if init_kind not in INIT_KINDS:
        raise ValueError(f"unknown init kind {init_kind!r}; choose from {INIT_KINDS}")
    xs = inst.initial_point(init_kind, seed)
    g = np.stack([inst.constraints[i](xs[i]) for i in range(inst.N)])
    return SwarmState(
        t=1,
        x=xs,
        y=g.copy(),
        mu=np.zeros((inst.N, inst.p)),
        lam=np.zeros((inst.N, inst.p)),
        c=np.ones(inst.N),
        g=g,
    )


def local_argmin(
    x_t: np.ndarray,
    subgrad: np.ndarray,
    lam: np.ndarray,
    constraint: AffineConstraint,
    xset: FeasibleSet,
    alpha_t: float,
    eta_t: float,
    *,
    method: str = "closed_form",
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Minimize alpha*s.(x - x_t) + lam.g(x) + eta*||x - x_t||^2 over the set.

    With affine g the objective is an isotropic quadratic, so the minimizer is
    the projection of x_t - (alpha*s + A^T lam) / (2 eta).  The projected
    gradient path iterates to the same point and exists as an independent
    route (and as the hook for future non-affine couplings).
    """
    if eta_t <= 0:
        raise ValueError("eta must be positive")
    drift = alpha_t * subgrad + constraint.A.T @ lam
    if method == "closed_form":
        return xset.project(x_t - drift / (2.0 * eta_t))
    if method != "projected_gradient":
        raise ValueError(f"unknown method {method!r}")
    x = xset.project(np.array(x_t, dtype=float))
    step = 0.35 / eta_t  # below 1/eta: strict contraction
    for _ in range(max_iter):
        x_new = xset.project(x - step * (drift + 2.0 * eta_t * (x - x_t)))
        if float(np.linalg.norm(x_new - x)) <= tol:
            return x_new
        x = x_new
    raise ConvergenceError(f"projected-gradient inner loop exceeded {max_iter} iterations")


def dust_round(
    inst: ProblemInstance,
    state: SwarmState,
    mixing: MixingMatrix | np.ndarray,
    sched: StepSchedule,
    *,
    argmin_method: str = "closed_form",
) -> SwarmState:
    """Advance every node one round using the round-t snapshot."""
    w = mixing.w if isinstance(mixing, MixingMatrix) else np.asarray(mixing, dtype=float)
    t = state.t
    n = state.n_nodes
    if w.shape != (n, n):
        raise DustError(f"mixing matrix shape {w.shape} does not match {n} nodes", t)
    alpha_t = sched.alpha(t)
    eta_t = sched.eta(t)

    c_next = w @ state.c
    if np.any(c_next <= 0.0):
        bad = int(np.argmin(c_next))
        raise MixingError(f"push-sum weight of node {bad} dropped to {c_next[bad]!r}", t)
    mu_hat = w @ state.mu
    lam_next = mu_hat / c_next[:, None]

    x_next: list[np.ndarray] = []
    g_next = np.empty_like(state.g)
    for i in range(n):
        _, subgrad = inst.costs.value_and_subgrad(i, t, state.x[i])
        xi = local_argmin(
            state.x[i], subgrad, lam_next[i], inst.constraints[i], inst.sets[i], alpha_t, eta_t,
            method=argmin_method,
        )
        x_next.append(xi)
        g_next[i] = inst.constraints[i](xi)

    y_next = w @ state.y + (g_next - state.g)
    mu_next = np.maximum(mu_hat + y_next, 0.0)

    step_norms = np.linalg.norm(mu_next - mu_hat, axis=1)
    y_norms = np.linalg.norm(y_next, axis=1)
    slack = float((step_norms - y_norms).max()) if n else 0.0

    for arr in (c_next, lam_next, y_next, mu_next):
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite value in node state", t)
    if not all(np.all(np.isfinite(xi)) for xi in x_next):
        raise NumericError("non-finite primal point", t)

    return SwarmState(
        t=t + 1,
        x=tuple(x_next),
        y=y_next,
        mu=mu_next,
        lam=lam_next,
        c=c_next,
        g=g_next,
        dual_step_slack=slack,
    )


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class RoundSummary:
    """Scalar diagnostics of the decision in force at round t."""

    t: int
    cost: float
    coupling: np.ndarray
    tracking_err: float
    mass_err: float
    c_min: float
    c_max: float
    mu_min: float
    mu_bar_norm: float
    consensus_err: float
    y_norm_max: float
    dual_step_slack: float


@dataclass
class Trajectory:
    """Per-round summaries plus run-level extremes; optionally raw duals per round."""

    summaries: list[RoundSummary]
    final_state: SwarmState
    r_empirical: float
    y_norm_max: float
    duals: list[tuple[np.ndarray, np.ndarray]] | None = None
    dump_paths: list[Path] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.summaries)

    def couplings(self) -> np.ndarray:
        return np.stack([s.coupling for s in self.summaries])

    def costs(self) -> np.ndarray:
        return np.array([s.cost for s in self.summaries])


def _summarize(state: SwarmState, inst: ProblemInstance, prev_mu_bar: np.ndarray | None) -> RoundSummary:
    coupling = state.coupling
    tracker_gap = float(np.linalg.norm(state.y.sum(axis=0) - coupling))
    consensus = 0.0
    if prev_mu_bar is not None:
        consensus = float(np.linalg.norm(state.lam - prev_mu_bar, axis=1).max())
    return RoundSummary(
        t=state.t,
        cost=inst.cost_at(state.t, state.x),
        coupling=coupling,
        tracking_err=tracker_gap / (1.0 + float(np.linalg.norm(coupling))),
        mass_err=abs(float(state.c.sum()) - state.n_nodes),
        c_min=float(state.c.min()),
        c_max=float(state.c.max()),
        mu_min=float(state.mu.min()) if state.mu.size else 0.0,
        mu_bar_norm=float(np.linalg.norm(state.mu_bar)),
        consensus_err=consensus,
        y_norm_max=float(np.linalg.norm(state.y, axis=1).max()) if state.y.size else 0.0,
        dual_step_slack=state.dual_step_slack,
    )


def run(
    inst: ProblemInstance,
    seq: GraphSequence,
    sched: StepSchedule,
    T: int,
    *,
    init_kind: str = "zero_projected",
    seed_init: int = 0,
    hooks: tuple = (),
    record_duals: bool = False,
    dump_every: int = 0,
    dump_dir=None,
) -> Trajectory:
    """Run T rounds and summarize the decision in force at each of them.

    The state produced by round T (round index T+1) is returned as
    ``final_state`` but not summarized; metrics cover decisions 1..T.
    """
    if T < 1:
        raise ValueError("horizon must be >= 1")
    if seq.n != inst.N:
        raise ValueError(f"graph has {seq.n} nodes, instance has {inst.N}")
    if dump_every and dump_dir is None:
        raise ValueError("dump_every needs dump_dir")
    state = initialize(inst, init_kind, seed_init)
    summaries: list[RoundSummary] = []
    duals: list[tuple[np.ndarray, np.ndarray]] | None = [] if record_duals else None
    dump_paths: list[Path] = []
    r_emp = float(state.c.min())
    y_max = 0.0
    prev_mu_bar: np.ndarray | None = None
    for t in range(1, T + 1):
        summary = _summarize(state, inst, prev_mu_bar)
        summaries.append(summary)
        y_max = max(y_max, summary.y_norm_max)
        if duals is not None:
            duals.append((state.lam.copy(), state.mu.copy()))
        for hook in hooks:
            hook(state, summary)
        if dump_every and (t == 1 or t % dump_every == 0):
            path = Path(dump_dir) / f"state_t{t:06d}.txt"
            dump_state(state, path)
            dump_paths.append(path)
        prev_mu_bar = state.mu_bar
        state = dust_round(inst, state, seq.mixing(t), sched)
        r_emp = min(r_emp, float(state.c.min()))
    return Trajectory(
        summaries=summaries,
        final_state=state,
        r_empirical=r_emp,
        y_norm_max=y_max,
        duals=duals,
        dump_paths=dump_paths,
    )


# ---------------------------------------------------------------------------
# state dumps

_STATE_HEADER = "doco-state v1"


def dump_state(state: SwarmState, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_STATE_HEADER + "\n")
        fh.write(f"t {state.t}\n")
        fh.write(f"N {state.n_nodes}\n")
        fh.write(f"p {state.mu.shape[1]}\n")
        fh.write("c " + ",".join(repr(float(v)) for v in state.c) + "\n")
        for name, block in (("y", state.y), ("mu", state.mu), ("lam", state.lam), ("g", state.g)):
            for i in range(state.n_nodes):
                fh.write(f"{name} {i} " + ",".join(repr(float(v)) for v in block[i]) + "\n")
        for i, xi in enumerate(state.x):
            fh.write(f"x {i} " + ",".join(repr(float(v)) for v in xi) + "\n")


def load_state(path) -> SwarmState:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if lines[0] != _STATE_HEADER:
        raise ValueError(f"not a {_STATE_HEADER!r} file: {path}")
    t = int(lines[1].split()[1])
    n = int(lines[2].split()[1])
    p = int(lines[3].split()[1])

    def parse_row(text: str) -> np.ndarray:
        return np.array([float(v) for v in text.split(",")]) if text else np.zeros(0)

    c = parse_row(lines[4].split(" ", 1)[1])
    blocks: dict[str, list[np.ndarray]] = {"y": [], "mu": [], "lam": [], "g": [], "x": []}
    for line in lines[5:]:
        name, _, rest = line.split(" ", 2)
        blocks[name].append(parse_row(rest))
    as_matrix = lambda rows: np.stack(rows) if rows else np.zeros((n, p))
    return SwarmState(
        t=t,
        x=tuple(blocks["x"]),
        y=as_matrix(blocks["y"]),
        mu=as_matrix(blocks["mu"]),
        lam=as_matrix(blocks["lam"]),
        c=c,
        g=as_matrix(blocks["g"]),
    )
