"""Online constrained problem instances.

An instance bundles, per node: a compact convex local set with closed-form
projection, an affine coupling term g_i(x) = A_i x + b_i contributing to the
shared inequality sum_i g_i(x_i) <= 0, and a time-varying convex cost oracle
revealed one round at a time.  Cost coefficients are drawn from keyed streams,
so the cost of node i at round t is reproducible regardless of evaluation
order.

The charging benchmark comes in three flavors:

* ``make_pev_instance`` - positive prices; charging costs money, the coupled
  capacity constraint is slack at every round's optimum.
* ``make_pev_active_instance`` - charging earns utility, the capacity
  constraint binds at the optimum; Slater point certified at zero.
* ``make_pev_equality_instance`` - utility costs with zero capacity, so the
  only feasible profile is zero and no strictly feasible point exists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import keyed_rng

# key-space tags for instance draws
_TAG_STATIC = 0
_TAG_QUAD = 1
_TAG_INIT = 2
_TAG_PW_WEIGHTS = 3
_TAG_PW_TARGETS = 4


# ---------------------------------------------------------------------------
# feasible sets


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo, hi]; projection is a coordinate-wise clamp."""

    lo: np.ndarray
    hi: np.ndarray

    kind = "box"

    def __post_init__(self) -> None:
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if np.any(hi < lo):
            raise ValueError("box has hi < lo")

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def project(self, z: np.ndarray) -> np.ndarray:
        return np.clip(z, self.lo, self.hi)

    def contains(self, z: np.ndarray, tol: float = 1e-12) -> bool:
        return bool(np.all(z >= self.lo - tol) and np.all(z <= self.hi + tol))

    def max_point_norm(self) -> float:
        return float(np.sqrt(np.sum(np.maximum(self.lo**2, self.hi**2))))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.lo + rng.random(self.dim) * (self.hi - self.lo)


@dataclass(frozen=True)
class Ball:
    """Euclidean ball; projection rescales radially toward the center."""

    center: np.ndarray
    radius: float

    kind = "ball"

    def __post_init__(self) -> None:
        center = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", center)
        if center.ndim != 1:
            raise ValueError("ball center must be a 1-d array")
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def project(self, z: np.ndarray) -> np.ndarray:
        offset = z - self.center
        dist = float(np.linalg.norm(offset))
        if dist <= self.radius:
            return np.array(z, dtype=float)
        return self.center + offset * (self.radius / dist)

    def contains(self, z: np.ndarray, tol: float = 1e-12) -> bool:
        return float(np.linalg.norm(z - self.center)) <= self.radius + tol

    def max_point_norm(self) -> float:
        return float(np.linalg.norm(self.center)) + self.radius

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        direction = rng.standard_normal(self.dim)
        direction /= np.linalg.norm(direction)
        scale = rng.random() ** (1.0 / self.dim)
        return self.center + self.radius * scale * direction


FeasibleSet = Box | Ball


def project(xset: FeasibleSet, z: np.ndarray) -> np.ndarray:
    """Euclidean projection of z onto the set."""
    z = np.asarray(z, dtype=float)
    if z.shape != (xset.dim,):
        raise ValueError(f"point has shape {z.shape}, set has dimension {xset.dim}")
    return xset.project(z)


# ---------------------------------------------------------------------------
# coupled constraint


@dataclass(frozen=True)
class AffineConstraint:
    """Per-node share of the coupled inequality: g(x) = A x + b."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if A.ndim != 2 or b.shape != (A.shape[0],):
            raise ValueError("constraint needs A with shape (p, d) and b with shape (p,)")

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x + self.b

    def component_range(self, xset: FeasibleSet) -> tuple[np.ndarray, np.ndarray]:
        """Exact componentwise (min, max) of A x + b over the set."""
        if isinstance(xset, Box):
            upper = self.b + np.maximum(self.A * xset.lo, self.A * xset.hi).sum(axis=1)
            lower = self.b + np.minimum(self.A * xset.lo, self.A * xset.hi).sum(axis=1)
            return lower, upper
        mid = self.A @ xset.center + self.b
        spread = xset.radius * np.linalg.norm(self.A, axis=1)
        return mid - spread, mid + spread

    def value_bound(self, xset: FeasibleSet) -> float:
        """Upper bound on ||A x + b|| over the set, from componentwise extremes."""
        lower, upper = self.component_range(xset)
        return float(np.linalg.norm(np.maximum(np.abs(lower), np.abs(upper))))

    def operator_bound(self) -> float:
        return float(np.linalg.norm(self.A))


# ---------------------------------------------------------------------------
# cost oracles


class QuadraticPevCosts:
    """Charging costs (a/2)||x||^2 + b.x with coefficients drawn per (node, round).

    ``price_sign`` +1 gives positive prices; -1 flips the linear term so that
    charging is rewarded and the coupled capacity constraint binds.
    """

    kind = "quadratic_pev"

    def __init__(self, seed: int, n_nodes: int, dims: tuple[int, ...], price_sign: float = 1.0):
        if abs(price_sign) != 1.0:
            raise ValueError("price_sign must be +1 or -1")
        self.seed = seed
        self.n_nodes = n_nodes
        self.dims = tuple(dims)
        self.price_sign = float(price_sign)

    def coefficients(self, i: int, t: int) -> tuple[float, np.ndarray]:
        rng = keyed_rng(self.seed, _TAG_QUAD, i, t)
        a = float(rng.uniform(0.5, 1.0))
        b = self.price_sign * (1.0 - rng.random(self.dims[i]))  # components in (0, 1]
        return a, b

    def value_and_subgrad(self, i: int, t: int, x: np.ndarray) -> tuple[float, np.ndarray]:
        a, b = self.coefficients(i, t)
        return 0.5 * a * float(x @ x) + float(b @ x), a * x + b

    def subgradient_bound(self, sets: tuple[FeasibleSet, ...]) -> float:
        # coefficient suprema: a <= 1, |b_j| <= 1
        return max(s.max_point_norm() + np.sqrt(s.dim) for s in sets)


class TableCosts:
    """Quadratic costs with explicit per-round coefficient tables (rounds 1..T)."""

    kind = "quadratic_table"

    def __init__(self, a: np.ndarray, b: tuple[np.ndarray, ...]):
        self.a = np.asarray(a, dtype=float)  # (N, T)
        self.b = tuple(np.asarray(bi, dtype=float) for bi in b)  # per node (T, d_i)
        if self.a.ndim != 2 or len(self.b) != self.a.shape[0]:
            raise ValueError("need a with shape (N, T) and one (T, d_i) block per node")
        for bi in self.b:
            if bi.shape[0] != self.a.shape[1]:
                raise ValueError("coefficient table lengths disagree")

    @property
    def horizon(self) -> int:
        return self.a.shape[1]

    def coefficients(self, i: int, t: int) -> tuple[float, np.ndarray]:
        if not (1 <= t <= self.horizon):
            raise ValueError(f"round {t} outside table horizon 1..{self.horizon}")
        return float(self.a[i, t - 1]), self.b[i][t - 1]

    def value_and_subgrad(self, i: int, t: int, x: np.ndarray) -> tuple[float, np.ndarray]:
        a, b = self.coefficients(i, t)
        return 0.5 * a * float(x @ x) + float(b @ x), a * x + b

    def subgradient_bound(self, sets: tuple[FeasibleSet, ...]) -> float:
        return max(
            float(self.a[i].max()) * sets[i].max_point_norm() + float(np.linalg.norm(self.b[i], axis=1).max())
            for i in range(len(sets))
        )


class PiecewiseLinearCosts:
    """Weighted absolute deviations from a per-round target: sum_j u_j |x_j - m_j|.

    Convex with kinks at the target; the reported subgradient is zero exactly
    at a kink (zero is always in the subdifferential there).
    """

    kind = "piecewise_linear"

    def __init__(self, seed: int, n_nodes: int, dims: tuple[int, ...], target_hi: float = 1.0):
        self.seed = seed
        self.n_nodes = n_nodes
        self.dims = tuple(dims)
        self.target_hi = float(target_hi)
        self.weights = tuple(
            keyed_rng(seed, _TAG_PW_WEIGHTS, i).uniform(0.2, 1.0, size=dims[i]) for i in range(n_nodes)
        )

    def target(self, i: int, t: int) -> np.ndarray:
        return keyed_rng(self.seed, _TAG_PW_TARGETS, i, t).uniform(0.0, self.target_hi, size=self.dims[i])

    def value_and_subgrad(self, i: int, t: int, x: np.ndarray) -> tuple[float, np.ndarray]:
        u = self.weights[i]
        gap = x - self.target(i, t)
        return float(u @ np.abs(gap)), u * np.sign(gap)

    def subgradient_bound(self, sets: tuple[FeasibleSet, ...]) -> float:
        return max(float(np.linalg.norm(u)) for u in self.weights)


class PiecewiseTableCosts(PiecewiseLinearCosts):
    """Piecewise-linear costs with explicit target tables (used by the loader)."""

    kind = "piecewise_table"

    def __init__(self, weights: tuple[np.ndarray, ...], targets: tuple[np.ndarray, ...]):
        self.weights = tuple(np.asarray(u, dtype=float) for u in weights)
        self.targets = tuple(np.asarray(m, dtype=float) for m in targets)  # per node (T, d_i)
        self.n_nodes = len(self.weights)
        self.dims = tuple(u.size for u in self.weights)

    @property
    def horizon(self) -> int:
        return self.targets[0].shape[0]

    def target(self, i: int, t: int) -> np.ndarray:
        if not (1 <= t <= self.horizon):
            raise ValueError(f"round {t} outside table horizon 1..{self.horizon}")
        return self.targets[i][t - 1]


# ---------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class BoundConstants:
    """Problem-level bounds: set diameter R, coupling value bound F, subgradient bound G."""

    R: float
    F: float
    G: float


@dataclass(frozen=True)
class ProblemInstance:
    sets: tuple[FeasibleSet, ...]
    constraints: tuple[AffineConstraint, ...]
    costs: object
    feasible_point: tuple[np.ndarray, ...]
    slater_point: tuple[np.ndarray, ...] | None = None
    slater_margin: float | None = None
    label: str = "custom"
    seed: int = 0
    horizon: int = 0
    key: str | None = None
    params: tuple[tuple[str, float], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not self.sets or len(self.sets) != len(self.constraints):
            raise ValueError("need one set and one constraint per node")
        ps = {c.p for c in self.constraints}
        if len(ps) != 1:
            raise ValueError("all nodes must share the coupled-constraint dimension")
        for s, c in zip(self.sets, self.constraints):
            if s.dim != c.d:
                raise ValueError("constraint and set dimensions disagree")
        if len(self.feasible_point) != self.N:
            raise ValueError("feasible point needs one block per node")
        coupling = self.coupling_at(self.feasible_point)
        if np.any(coupling > 1e-12):
            raise ValueError("declared feasible point violates the coupled constraint")
        if (self.slater_point is None) != (self.slater_margin is None):
            raise ValueError("Slater witness and margin must be given together")
        if self.slater_point is not None:
            if self.slater_margin <= 0:
                raise ValueError("Slater margin must be positive")
            if np.any(self.coupling_at(self.slater_point) > -self.slater_margin):
                raise ValueError("Slater witness does not achieve the declared margin")

    @property
    def N(self) -> int:
        return len(self.sets)

    @property
    def p(self) -> int:
        return self.constraints[0].p

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.sets)

    def coupling_at(self, xs) -> np.ndarray:
        total = np.zeros(self.p)
        for c, x in zip(self.constraints, xs):
            total += c(x)
        return total

    def cost_at(self, t: int, xs) -> float:
        return sum(self.costs.value_and_subgrad(i, t, xs[i])[0] for i in range(self.N))

    def initial_point(self, init_kind: str, seed: int) -> tuple[np.ndarray, ...]:
        if init_kind == "zero_projected":
            return tuple(s.project(np.zeros(s.dim)) for s in self.sets)
        if init_kind == "seeded_random_in_set":
            return tuple(s.sample(keyed_rng(seed, _TAG_INIT, i)) for i, s in enumerate(self.sets))
        if init_kind == "feasible_point":
            return tuple(np.array(x, dtype=float) for x in self.feasible_point)
        raise ValueError(f"unknown init kind {init_kind!r}")


def bound_constants(inst: ProblemInstance) -> BoundConstants:
    """R, F, G computed from closed-form extremes over box/ball sets."""
    R = max(s.diameter for s in inst.sets)
    F = max(c.value_bound(s) for c, s in zip(inst.constraints, inst.sets))
    G = max(
        max(c.operator_bound() for c in inst.constraints),
        inst.costs.subgradient_bound(inst.sets),
    )
    return BoundConstants(R=R, F=F, G=G)


# ---------------------------------------------------------------------------
# charging benchmark


def _pev_instance(
    N: int,
    d: int,
    p: int,
    seed: int,
    horizon: int,
    x_max: float,
    kappa_feas: float,
    price_sign: float,
    zero_capacity: bool,
    label: str,
) -> ProblemInstance:
    if N < 2:
        raise ValueError("need at least 2 nodes")
    if d < 1 or p < 1:
        raise ValueError("need d >= 1 and p >= 1")
    if not (0.0 < kappa_feas <= 1.0):
        raise ValueError("kappa_feas must lie in (0, 1]")
    if x_max <= 0:
        raise ValueError("x_max must be positive")
    rng = keyed_rng(seed, _TAG_STATIC)
    mats = [rng.uniform(0.0, 1.0, size=(p, d)) for _ in range(N)]
    mid = np.full(d, x_max / 2.0)
    capacity = np.zeros(p) if zero_capacity else kappa_feas * sum(A @ mid for A in mats)
    constraints = tuple(AffineConstraint(A=A, b=-capacity / N) for A in mats)
    sets = tuple(Box(lo=np.zeros(d), hi=np.full(d, x_max)) for _ in range(N))
    zeros = tuple(np.zeros(d) for _ in range(N))
    slater_point = None if zero_capacity else zeros
    slater_margin = None if zero_capacity else float(capacity.min())
    return ProblemInstance(
        sets=sets,
        constraints=constraints,
        costs=QuadraticPevCosts(seed, N, tuple([d] * N), price_sign=price_sign),
        feasible_point=zeros,
        slater_point=slater_point,
        slater_margin=slater_margin,
        label=label,
        seed=seed,
        horizon=horizon,
        key=f"{label}:s{seed}:N{N}:d{d}:p{p}:x{x_max!r}:k{kappa_feas!r}",
        params=(("x_max", x_max), ("kappa_feas", kappa_feas), ("price_sign", price_sign)),
    )


def make_pev_instance(
    N: int, d: int, p: int, seed: int, horizon: int, *, x_max: float = 1.0, kappa_feas: float = 0.8
) -> ProblemInstance:
    """Charging benchmark with positive prices and a slack capacity constraint."""
    return _pev_instance(N, d, p, seed, horizon, x_max, kappa_feas, 1.0, False, "pev")


def make_pev_active_instance(
    N: int, d: int, p: int, seed: int, horizon: int, *, x_max: float = 1.0, kappa_feas: float = 0.5
) -> ProblemInstance:
    """Charging benchmark where charging earns utility, so capacity binds (Slater holds)."""
    return _pev_instance(N, d, p, seed, horizon, x_max, kappa_feas, -1.0, False, "pev_active")


def make_pev_equality_instance(
    N: int, d: int, p: int, seed: int, horizon: int, *, x_max: float = 1.0
) -> ProblemInstance:
    """Utility costs against zero capacity: only the zero profile is feasible, no Slater point."""
    return _pev_instance(N, d, p, seed, horizon, x_max, 1.0, -1.0, True, "pev_equality")


SCENARIOS = {
    "pev": make_pev_instance,
    "pev_active": make_pev_active_instance,
    "pev_equality": lambda N, d, p, seed, horizon, **kw: make_pev_equality_instance(
        N, d, p, seed, horizon, x_max=kw.get("x_max", 1.0)
    ),
}


# ---------------------------------------------------------------------------
# versioned text serialization

_FORMAT_HEADER = "doco-instance v1"


def _write_matrix(fh, name: str, m: np.ndarray) -> None:
    m = np.atleast_2d(m)
    fh.write(f"{name} {m.shape[0]} {m.shape[1]}\n")
    for row in m:
        fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _read_matrix(lines, idx: int, name: str) -> tuple[np.ndarray, int]:
    prefix, rows_s, cols_s = lines[idx].rsplit(maxsplit=2)
    if prefix != name:
        raise ValueError(f"expected block {name!r} at line {idx + 1}, found {lines[idx]!r}")
    rows, cols = int(rows_s), int(cols_s)
    data = [[float(v) for v in lines[idx + 1 + r].split(",")] for r in range(rows)]
    m = np.array(data, dtype=float).reshape(rows, cols)
    return m, idx + 1 + rows


def serialize_instance(inst: ProblemInstance, path) -> None:
    """Write the instance, with cost coefficients materialized up to its horizon."""
    if inst.horizon < 1:
        raise ValueError("instance has no declared horizon; cannot materialize cost tables")
    quad = hasattr(inst.costs, "coefficients")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_FORMAT_HEADER + "\n")
        fh.write(f"label {inst.label}\n")
        fh.write(f"seed {inst.seed}\n")
        fh.write(f"horizon {inst.horizon}\n")
        fh.write(f"N {inst.N}\n")
        fh.write(f"p {inst.p}\n")
        fh.write(f"slater_margin {repr(float(inst.slater_margin)) if inst.slater_margin is not None else 'none'}\n")
        for i, (s, c) in enumerate(zip(inst.sets, inst.constraints)):
            fh.write(f"[node {i}]\n")
            fh.write(f"set {s.kind}\n")
            if isinstance(s, Box):
                _write_matrix(fh, "lo", s.lo)
                _write_matrix(fh, "hi", s.hi)
            else:
                _write_matrix(fh, "center", s.center)
                fh.write(f"radius {s.radius!r}\n")
            _write_matrix(fh, "A", c.A)
            _write_matrix(fh, "b", c.b)
            _write_matrix(fh, "feasible", inst.feasible_point[i])
            if inst.slater_point is not None:
                _write_matrix(fh, "slater", inst.slater_point[i])
        if quad:
            fh.write("[costs quadratic_table]\n")
            for i in range(inst.N):
                rows = []
                for t in range(1, inst.horizon + 1):
                    a, b = inst.costs.coefficients(i, t)
                    rows.append(np.concatenate([[a], b]))
                _write_matrix(fh, f"coeffs {i}", np.array(rows))
        else:
            fh.write("[costs piecewise_table]\n")
            for i in range(inst.N):
                _write_matrix(fh, f"weights {i}", inst.costs.weights[i])
                rows = [inst.costs.target(i, t) for t in range(1, inst.horizon + 1)]
                _write_matrix(fh, f"targets {i}", np.array(rows))


def load_instance(path) -> ProblemInstance:
    lines = [ln.rstrip("\n") for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    if not lines or lines[0] != _FORMAT_HEADER:
        raise ValueError(f"not a {_FORMAT_HEADER!r} file: {path}")
    meta: dict[str, str] = {}
    idx = 1
    while idx < len(lines) and not lines[idx].startswith("["):
        k, v = lines[idx].split(maxsplit=1)
        meta[k] = v
        idx += 1
    N = int(meta["N"])
    sets: list[FeasibleSet] = []
    constraints: list[AffineConstraint] = []
    feasible: list[np.ndarray] = []
    slater: list[np.ndarray] = []
    for i in range(N):
        if lines[idx] != f"[node {i}]":
            raise ValueError(f"expected [node {i}] at line {idx + 1}")
        idx += 1
        kind = lines[idx].split()[1]
        idx += 1
        if kind == "box":
            lo, idx = _read_matrix(lines, idx, "lo")
            hi, idx = _read_matrix(lines, idx, "hi")
            sets.append(Box(lo=lo.ravel(), hi=hi.ravel()))
        else:
            center, idx = _read_matrix(lines, idx, "center")
            radius = float(lines[idx].split()[1])
            idx += 1
            sets.append(Ball(center=center.ravel(), radius=radius))
        A, idx = _read_matrix(lines, idx, "A")
        b, idx = _read_matrix(lines, idx, "b")
        constraints.append(AffineConstraint(A=A, b=b.ravel()))
        fp, idx = _read_matrix(lines, idx, "feasible")
        feasible.append(fp.ravel())
        if idx < len(lines) and lines[idx].startswith("slater "):
            sp, idx = _read_matrix(lines, idx, "slater")
            slater.append(sp.ravel())
    family = lines[idx].strip("[]").split()[1]
    idx += 1
    costs: object
    if family == "quadratic_table":
        a_rows, b_blocks = [], []
        for i in range(N):
            block, idx = _read_matrix(lines, idx, f"coeffs {i}")
            a_rows.append(block[:, 0])
            b_blocks.append(block[:, 1:])
        costs = TableCosts(a=np.array(a_rows), b=tuple(b_blocks))
    else:
        weights, targets = [], []
        for i in range(N):
            u, idx = _read_matrix(lines, idx, f"weights {i}")
            m, idx = _read_matrix(lines, idx, f"targets {i}")
            weights.append(u.ravel())
            targets.append(m)
        costs = PiecewiseTableCosts(weights=tuple(weights), targets=tuple(targets))
    margin = None if meta["slater_margin"] == "none" else float(meta["slater_margin"])
    return ProblemInstance(
        sets=tuple(sets),
        constraints=tuple(constraints),
        costs=costs,
        feasible_point=tuple(feasible),
        slater_point=tuple(slater) if slater else None,
        slater_margin=margin,
        label=meta["label"],
        seed=int(meta["seed"]),
        horizon=int(meta["horizon"]),
        key=f"{meta['label']}:s{meta['seed']}:loaded",
    )
