"""Time-varying directed communication graphs and their column-stochastic mixing.

A round's graph is a set of directed edges (j, i) meaning node i receives from
node j; self-loops are implicit (every node always hears itself).  Mixing
weights follow the out-degree rule, which needs only local knowledge and makes
every per-round matrix column stochastic.  A sequence is B-connected when the
union of any B consecutive rounds' edge sets is strongly connected.

Node labels in edge lists are 1-based; matrix row/column k corresponds to the
node labeled k+1.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .rng import keyed_rng

Edge = tuple[int, int]

SEQUENCE_KINDS = ("static_ring", "static_complete", "cyclic_partition", "random_bconnected")

# key-space tags so graph draws never collide across purposes
_TAG_PARTITION = 11
_TAG_CYCLE = 12
_TAG_ASSIGN = 13
_TAG_EXTRA = 14


@dataclass(frozen=True)
class RoundGraph:
    """Directed graph at one round: edges (j, i) deliver j's message to i."""

    t: int
    n: int
    edges: tuple[Edge, ...]

    def __post_init__(self) -> None:
        if self.t < 1:
            raise ValueError(f"round index must be >= 1, got {self.t}")
        if self.n < 1:
            raise ValueError(f"node count must be >= 1, got {self.n}")
        for j, i in self.edges:
            if not (1 <= j <= self.n and 1 <= i <= self.n):
                raise ValueError(f"edge ({j},{i}) out of range [1,{self.n}]")
            if j == i:
                raise ValueError(f"explicit self-loop ({j},{i}); self-loops are implicit")

    def out_neighbors(self, j: int) -> set[int]:
        """Out-neighborhood of node j, including j itself."""
        return {i for (src, i) in self.edges if src == j} | {j}

    def in_neighbors(self, i: int) -> set[int]:
        """In-neighborhood of node i, including i itself."""
        return {j for (j, dst) in self.edges if dst == i} | {i}


@dataclass(frozen=True)
class MixingMatrix:
    """Per-round nonnegative weight matrix with unit column sums.

    ``w[i, j]`` weights the message node i+1 receives from node j+1; ``a`` is
    the declared positivity floor for nonzero entries.
    """

    w: np.ndarray
    a: float

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def column_sums(self) -> np.ndarray:
        return self.w.sum(axis=0)

    def min_positive(self) -> float:
        positive = self.w[self.w > 0.0]
        return float(positive.min()) if positive.size else float("nan")

    def check(self, g: RoundGraph | None = None, tol: float = 1e-12) -> None:
        """Raise if column sums, the positivity floor, or the sparsity pattern fail."""
        sums = self.column_sums()
        if np.any(np.abs(sums - 1.0) > tol):
            worst = int(np.argmax(np.abs(sums - 1.0)))
            raise ValueError(f"column {worst + 1} sums to {sums[worst]!r}, not 1")
        if np.any(self.w < 0.0):
            raise ValueError("negative mixing weight")
        positive = self.w > 0.0
        if positive.any() and self.w[positive].min() < self.a:
            raise ValueError(f"positive weight below floor a={self.a}")
        if g is not None:
            expected = np.eye(self.n, dtype=bool)
            for j, i in g.edges:
                expected[i - 1, j - 1] = True
            if not np.array_equal(positive, expected):
                raise ValueError("sparsity pattern does not match graph edges plus self-loops")


def build_out_degree_mixing(g: RoundGraph) -> MixingMatrix:
    """Column-stochastic weights w[i, j] = 1 / out_degree(j) on j's out-neighborhood.

    Out-degrees count the implicit self-loop, so every positive entry is at
    least 1/n and every column sums to one.
    """
    n = g.n
    w = np.zeros((n, n))
    degrees = np.ones(n, dtype=int)  # self-loop
    receivers: list[list[int]] = [[j] for j in range(n)]
    for j, i in g.edges:
        degrees[j - 1] += 1
        receivers[j - 1].append(i - 1)
    for j in range(n):
        w[receivers[j], j] = 1.0 / degrees[j]
    return MixingMatrix(w=w, a=1.0 / n)


# ---------------------------------------------------------------------------
# sequence generation


@functools.lru_cache(maxsize=256)
def _base_edges(n: int, seed: int) -> tuple[Edge, ...]:
    """Strongly connected base digraph: the directed ring plus a few seeded chords."""
    ring = [(k, k % n + 1) for k in range(1, n + 1)]
    extra: set[Edge] = set()
    rng = keyed_rng(seed, _TAG_PARTITION)
    want = n // 3
    while len(extra) < want:
        j = int(rng.integers(1, n + 1))
        i = int(rng.integers(1, n + 1))
        if j != i and (j, i) not in ring and (j, i) not in extra:
            extra.add((j, i))
    return tuple(ring) + tuple(sorted(extra))


@functools.lru_cache(maxsize=256)
def _cyclic_buckets(n: int, B: int, seed: int) -> tuple[tuple[Edge, ...], ...]:
    """Partition the base digraph's edges into B subsets used cyclically.

    Any B consecutive rounds visit every subset, so each window's union is the
    full (strongly connected) base graph.
    """
    edges = list(_base_edges(n, seed))
    rng = keyed_rng(seed, _TAG_ASSIGN)
    order = rng.permutation(len(edges))
    buckets: list[list[Edge]] = [[] for _ in range(B)]
    for slot, idx in enumerate(order):
        buckets[slot % B].append(edges[idx])
    return tuple(tuple(sorted(b)) for b in buckets)


@functools.lru_cache(maxsize=1024)
def _window_cycle_assignment(n: int, B: int, seed: int, window: int) -> tuple[tuple[Edge, ...], ...]:
    """Random directed Hamiltonian cycle for one window, edges spread over its B rounds."""
    rng = keyed_rng(seed, _TAG_CYCLE, window)
    perm = [int(v) + 1 for v in rng.permutation(n)]
    cycle = [(perm[k], perm[(k + 1) % n]) for k in range(n)]
    slots = rng.integers(0, B, size=n)
    per_round: list[list[Edge]] = [[] for _ in range(B)]
    for edge, slot in zip(cycle, slots):
        per_round[int(slot)].append(edge)
    return tuple(tuple(sorted(r)) for r in per_round)


def _random_round_edges(n: int, B: int, seed: int, t: int, extra_prob: float) -> tuple[Edge, ...]:
    window, offset = divmod(t - 1, B)
    edges = set(_window_cycle_assignment(n, B, seed, window)[offset])
    rng = keyed_rng(seed, _TAG_EXTRA, t)
    mask = rng.random((n, n)) < extra_prob
    for j in range(n):
        for i in range(n):
            if j != i and mask[j, i]:
                edges.add((j + 1, i + 1))
    return tuple(sorted(edges))


@dataclass(frozen=True)
class GraphSequence:
    """Generator mapping round t to a graph, with declared connectivity window B."""

    kind: str
    n: int
    B: int
    seed: int
    extra_prob: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in SEQUENCE_KINDS:
            raise ValueError(f"unknown sequence kind {self.kind!r}; choose from {SEQUENCE_KINDS}")
        if self.n < 2:
            raise ValueError(f"need at least 2 nodes, got {self.n}")
        if self.B < 1:
            raise ValueError(f"connectivity window must be >= 1, got {self.B}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    def round(self, t: int) -> RoundGraph:
        if t < 1:
            raise ValueError(f"round index must be >= 1, got {t}")
        n = self.n
        if self.kind == "static_ring":
            edges = tuple((k, k % n + 1) for k in range(1, n + 1))
        elif self.kind == "static_complete":
            edges = tuple((j, i) for j in range(1, n + 1) for i in range(1, n + 1) if j != i)
        elif self.kind == "cyclic_partition":
            edges = _cyclic_buckets(n, self.B, self.seed)[(t - 1) % self.B]
        else:
            edges = _random_round_edges(n, self.B, self.seed, t, self.extra_prob)
        return RoundGraph(t=t, n=n, edges=edges)

    def mixing(self, t: int) -> MixingMatrix:
        return build_out_degree_mixing(self.round(t))


def generate_sequence(kind: str, n: int, B: int, seed: int) -> GraphSequence:
    """Deterministic graph sequence; identical arguments give identical graphs."""
    return GraphSequence(kind=kind, n=n, B=B, seed=seed)


# ---------------------------------------------------------------------------
# validation


@dataclass
class Assumption1Report:
    """Per-round and per-window findings from checking a sequence's mixing assumptions."""

    n: int
    B: int
    T: int
    a: float
    column_sum_failures: list[tuple[int, int, float]] = field(default_factory=list)
    weight_floor_failures: list[tuple[int, float]] = field(default_factory=list)
    disconnected_windows: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.column_sum_failures or self.weight_floor_failures or self.disconnected_windows)

    def summary(self) -> str:
        if self.ok:
            return f"ok: {self.T} rounds, window B={self.B}, floor a={self.a:g}"
        parts = []
        if self.column_sum_failures:
            t, j, s = self.column_sum_failures[0]
            parts.append(f"{len(self.column_sum_failures)} column-sum failures (first: round {t}, col {j}, sum {s!r})")
        if self.weight_floor_failures:
            t, m = self.weight_floor_failures[0]
            parts.append(f"{len(self.weight_floor_failures)} weight-floor failures (first: round {t}, min {m!r})")
        if self.disconnected_windows:
            parts.append(f"disconnected windows: {self.disconnected_windows}")
        return "; ".join(parts)


def _strongly_connected(n: int, edges: set[Edge]) -> bool:
    """Every node reaches every other along directed edges (BFS from each node)."""
    adjacency: list[list[int]] = [[] for _ in range(n + 1)]
    for j, i in edges:
        adjacency[j].append(i)
    for start in range(1, n + 1):
        seen = {start}
        frontier = [start]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adjacency[u]:
                    if v not in seen:
                        seen.add(v)
                        nxt.append(v)
            frontier = nxt
        if len(seen) < n:
            return False
    return True


def validate_assumption1(seq: GraphSequence, T: int, a: float | None = None, tol: float = 1e-12) -> Assumption1Report:
    """Check column sums, the weight floor, and window-union strong connectivity.

    Findings are reported, not raised; ``report.ok`` aggregates them.  Windows
    are the disjoint blocks of B consecutive rounds that fit inside T.
    """
    if T < seq.B:
        raise ValueError(f"horizon T={T} shorter than window B={seq.B}")
    floor = 1.0 / seq.n if a is None else a
    report = Assumption1Report(n=seq.n, B=seq.B, T=T, a=floor)
    union: set[Edge] = set()
    for t in range(1, T + 1):
        g = seq.round(t)
        m = seq.mixing(t)
        sums = m.column_sums()
        for j in range(seq.n):
            if abs(sums[j] - 1.0) > tol:
                report.column_sum_failures.append((t, j + 1, float(sums[j])))
        mp = m.min_positive()
        if mp < floor - tol:
            report.weight_floor_failures.append((t, mp))
        union.update(g.edges)
        if t % seq.B == 0:
            if not _strongly_connected(seq.n, union):
                report.disconnected_windows.append(t // seq.B - 1)
            union.clear()
    return report


def dump_sequence_csv(seq: GraphSequence, T: int, path) -> None:
    """Write per-round positive mixing weights as ``t,from,to,weight`` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,from,to,weight\n")
        for t in range(1, T + 1):
            w = seq.mixing(t).w
            for j in range(seq.n):
                for i in range(seq.n):
                    if w[i, j] > 0.0:
                        fh.write(f"{t},{j + 1},{i + 1},{float(w[i, j])!r}\n")
