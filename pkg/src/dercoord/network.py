"""Time-varying communication graphs and per-step mixing matrices.

A `NominalGraph` fixes the topology; a `GraphSchedule` drops each nominal
link independently with probability q at every step, deterministically per
(seed, step). Sampling is counter-based (Philox4x64 keyed by (seed, k),
one 53-bit uniform per edge index), so step k can be sampled without
sampling any earlier step and identical inputs give identical schedules.
The generator contract is named `philox4x64-v1` and enters the schedule
digest.

Weight matrices:

* `metropolis_weights` (undirected): w_ij = 1/max(d_i, d_j) on active
  edges with nominal degrees d_i = |N_i| + 1. Doubly stochastic and
  symmetric by construction, and the self-weight satisfies
  w_ii = 1 - sum_j w_ij >= 1 - (d_i - 1)/d_i = 1/d_i > 0, so the diagonal
  is bounded below by 1/max_i d_i without choosing any constant.
* `push_matrix` (directed): column-stochastic with instantaneous
  out-degrees D_j[k] = |active out-neighbors| + 1.
* `augmented_push_matrix` (directed, unknown instantaneous out-degrees):
  column-stochastic over real plus virtual nodes, one virtual node per
  nominal arc holding in-flight mass; every nonzero entry is at least
  tau = min(gamma, 1-gamma)/n.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import CaseParseError, InvalidGraphError

PRNG_VERSION = "philox4x64-v1"

_MAX_SEED = 2**64


@dataclass(frozen=True)
class NominalGraph:
    """Fixed communication topology: n nodes plus undirected edges or arcs.

    Undirected edges are stored as (min, max) pairs. The graph must be
    connected (undirected) or strongly connected (directed); this is
    checked at construction.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    directed: bool

    def __init__(self, n: int, edges, directed: bool):
        if n < 1:
            raise InvalidGraphError("graph needs at least one node")
        canon = []
        seen = set()
        for e in edges:
            i, j = int(e[0]), int(e[1])
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidGraphError(f"edge ({i}, {j}) out of range for n={n}")
            if i == j:
                raise InvalidGraphError(f"self-loop at node {i}")
            key = (i, j) if directed else (min(i, j), max(i, j))
            if key in seen:
                raise InvalidGraphError(f"duplicate edge ({i}, {j})")
            seen.add(key)
            canon.append(key)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", tuple(canon))
        object.__setattr__(self, "directed", bool(directed))
        self._check_connectivity()

    def _check_connectivity(self) -> None:
        if self.n == 1:
            return
        kind = "strong" if self.directed else "weak"
        ncomp = connected_components(
            self._adjacency(), directed=self.directed, connection=kind, return_labels=False
        )
        if ncomp != 1:
            what = "strongly connected" if self.directed else "connected"
            raise InvalidGraphError(f"nominal graph must be {what}")

    def _adjacency(self):
        if not self.edges:
            return coo_matrix((self.n, self.n))
        src = np.array([e[0] for e in self.edges])
        dst = np.array([e[1] for e in self.edges])
        if not self.directed:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        return coo_matrix((np.ones(src.shape[0]), (src, dst)), shape=(self.n, self.n))

    @property
    def m(self) -> int:
        return len(self.edges)

    @cached_property
    def srcs(self) -> np.ndarray:
        return np.array([e[0] for e in self.edges], dtype=np.intp)

    @cached_property
    def dsts(self) -> np.ndarray:
        return np.array([e[1] for e in self.edges], dtype=np.intp)

    @cached_property
    def degrees(self) -> np.ndarray:
        """Nominal degrees |N_i| + 1 (undirected)."""
        if self.directed:
            raise InvalidGraphError("nominal degrees are an undirected notion")
        d = np.ones(self.n)
        np.add.at(d, self.srcs, 1.0)
        np.add.at(d, self.dsts, 1.0)
        return d

    @cached_property
    def out_degrees(self) -> np.ndarray:
        """Nominal out-degrees |N_i^+| + 1 (directed)."""
        if not self.directed:
            raise InvalidGraphError("out-degrees are a directed notion")
        d = np.ones(self.n)
        np.add.at(d, self.srcs, 1.0)
        return d

    def relabeled(self, perm) -> "NominalGraph":
        """Graph with node i renamed perm[i]; edge order is preserved."""
        perm = np.asarray(perm, dtype=int)
        edges = [(int(perm[i]), int(perm[j])) for i, j in self.edges]
        return NominalGraph(self.n, edges, self.directed)


@dataclass(frozen=True)
class GraphSchedule:
    """Per-step active edge sets over a nominal graph.

    Every nominal link is present independently with probability 1 - q at
    each step; undirected edges fail as a unit (both directions at once),
    directed arcs fail independently. Identical (seed, nominal, q, k)
    always yield the identical active set.
    """

    nominal: NominalGraph
    q: float
    seed: int
    horizon: int

    def __post_init__(self):
        if not (0.0 <= self.q < 1.0):
            raise InvalidGraphError(f"failure probability q={self.q} outside [0, 1)")
        if not (0 <= self.seed < _MAX_SEED):
            raise InvalidGraphError("seed must fit in 64 bits")
        if self.horizon < 0:
            raise InvalidGraphError("horizon must be nonnegative")

    def active_mask(self, k: int) -> np.ndarray:
        """Boolean mask over nominal edges active during step k."""
        if not (0 <= k < self.horizon):
            raise InvalidGraphError(f"step {k} outside horizon {self.horizon}")
        key = np.array([self.seed, k], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        return gen.random(self.nominal.m) >= self.q

    def active_edges(self, k: int) -> tuple[tuple[int, int], ...]:
        mask = self.active_mask(k)
        return tuple(e for e, live in zip(self.nominal.edges, mask) if live)

    def digest(self) -> str:
        """Hash identifying (generator, nominal, q, seed, horizon)."""
        parts = [
            PRNG_VERSION,
            str(self.nominal.n),
            "directed" if self.nominal.directed else "undirected",
            ";".join(f"{i},{j}" for i, j in self.nominal.edges),
            format(self.q, ".17g"),
            str(self.seed),
            str(self.horizon),
        ]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()


def sample_active(schedule: GraphSchedule, k: int) -> np.ndarray:
    """Active-edge mask for step k (see `GraphSchedule.active_mask`)."""
    return schedule.active_mask(k)


def metropolis_weights(nominal: NominalGraph, active: np.ndarray) -> np.ndarray:
    """Symmetric doubly stochastic weights on the active edges."""
    if nominal.directed:
        raise InvalidGraphError("Metropolis weights require an undirected graph")
    n = nominal.n
    W = np.zeros((n, n))
    if nominal.m:
        d = nominal.degrees
        srcs, dsts = nominal.srcs[active], nominal.dsts[active]
        w = 1.0 / np.maximum(d[srcs], d[dsts])
        W[srcs, dsts] = w
        W[dsts, srcs] = w
    W[np.diag_indices(n)] = 1.0 - W.sum(axis=1)
    return W


def push_matrix(nominal: NominalGraph, active: np.ndarray) -> np.ndarray:
    """Column-stochastic push matrix from instantaneous out-degrees."""
    if not nominal.directed:
        raise InvalidGraphError("push matrices require a directed graph")
    n = nominal.n
    D = np.ones(n)
    srcs, dsts = nominal.srcs[active], nominal.dsts[active]
    np.add.at(D, srcs, 1.0)
    P = np.zeros((n, n))
    P[np.diag_indices(n)] = 1.0 / D
    P[dsts, srcs] = 1.0 / D[srcs]
    return P


@dataclass(frozen=True)
class VirtualIndexMap:
    """Bijection between nominal arcs and virtual-node indices n..N-1."""

    nominal: NominalGraph

    def __post_init__(self):
        if not self.nominal.directed:
            raise InvalidGraphError("virtual nodes are defined for directed graphs")

    @property
    def n_real(self) -> int:
        return self.nominal.n

    @property
    def size(self) -> int:
        """Augmented node count N = n + |nominal arcs|."""
        return self.nominal.n + self.nominal.m

    @cached_property
    def _arc_to_index(self) -> dict[tuple[int, int], int]:
        return {arc: self.nominal.n + pos for pos, arc in enumerate(self.nominal.edges)}

    def index(self, src: int, dst: int) -> int:
        try:
            return self._arc_to_index[(src, dst)]
        except KeyError:
            raise InvalidGraphError(f"({src}, {dst}) is not a nominal arc") from None

    def arc(self, node: int) -> tuple[int, int]:
        pos = node - self.nominal.n
        if not (0 <= pos < self.nominal.m):
            raise InvalidGraphError(f"{node} is not a virtual node index")
        return self.nominal.edges[pos]


def augmented_push_matrix(
    nominal: NominalGraph,
    active: np.ndarray,
    gamma: float,
    vmap: VirtualIndexMap | None = None,
) -> np.ndarray:
    """Column-stochastic mixing over real plus virtual nodes.

    Uses only nominal out-degrees. An active arc (j, i) routes gamma/d_j
    of node j's share to i and (1-gamma)/d_j to the arc's virtual node,
    which also retains (1-gamma) of its own mass and releases gamma to i;
    an inactive arc diverts the full 1/d_j share to the virtual node, which
    keeps everything. Every nonzero entry is >= min(gamma, 1-gamma)/n.
    """
    if vmap is None:
        vmap = VirtualIndexMap(nominal)
    if not (0.0 < gamma < 1.0):
        raise InvalidGraphError("gamma must lie in (0, 1)")
    n, m = nominal.n, nominal.m
    N = n + m
    dplus = nominal.out_degrees
    P = np.zeros((N, N))
    P[np.arange(n), np.arange(n)] = 1.0 / dplus
    if m == 0:
        return P
    srcs, dsts = nominal.srcs, nominal.dsts
    virt = n + np.arange(m)
    share = 1.0 / dplus[srcs]
    act = np.asarray(active, dtype=bool)
    ina = ~act
    P[dsts[act], srcs[act]] = gamma * share[act]
    P[virt[act], srcs[act]] = (1.0 - gamma) * share[act]
    P[dsts[act], virt[act]] = gamma
    P[virt[act], virt[act]] = 1.0 - gamma
    P[virt[ina], srcs[ina]] = share[ina]
    P[virt[ina], virt[ina]] = 1.0
    return P


def union_connected(nominal: NominalGraph, mask: np.ndarray) -> bool:
    """Is the subgraph of nominal edges flagged by `mask` (strongly) connected?"""
    n = nominal.n
    if n == 1:
        return True
    src = nominal.srcs[mask]
    dst = nominal.dsts[mask]
    if src.size == 0:
        return False
    if not nominal.directed:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    adj = coo_matrix((np.ones(src.shape[0]), (src, dst)), shape=(n, n))
    kind = "strong" if nominal.directed else "weak"
    ncomp = connected_components(adj, directed=nominal.directed, connection=kind, return_labels=False)
    return int(ncomp) == 1


def windows_connected(nominal: NominalGraph, masks: np.ndarray, B: int) -> np.ndarray:
    """Per-window verdicts: union of B consecutive active sets is connected.

    `masks` is a (K, m) boolean array of active sets; only complete
    windows [kB, (k+1)B - 1] within K are judged.
    """
    if B < 1:
        raise InvalidGraphError("window length B must be >= 1")
    K = masks.shape[0]
    verdicts = []
    for start in range(0, K - B + 1, B):
        union = masks[start : start + B].any(axis=0)
        verdicts.append(union_connected(nominal, union))
    return np.array(verdicts, dtype=bool)


def check_B_connectivity(schedule: GraphSchedule, B: int) -> np.ndarray:
    """Window verdicts for the realized schedule over its full horizon."""
    if schedule.horizon == 0:
        return np.zeros(0, dtype=bool)
    masks = np.stack([schedule.active_mask(k) for k in range(schedule.horizon)])
    return windows_connected(schedule.nominal, masks, B)


def minimal_connectivity_window(schedule: GraphSchedule, K: int | None = None) -> int | None:
    """Smallest B with every complete window connected, or None.

    This is the realized connectivity constant of one sampled schedule; it
    is measured, not assumed.
    """
    K = schedule.horizon if K is None else min(K, schedule.horizon)
    if K < 1:
        return None
    masks = np.stack([schedule.active_mask(k) for k in range(K)])
    for B in range(1, K + 1):
        if windows_connected(schedule.nominal, masks, B).all():
            return B
    return None


def write_graph(graph: NominalGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_graph(graph))


def format_graph(graph: NominalGraph) -> str:
    mode = "directed" if graph.directed else "undirected"
    lines = [f"{graph.n} {graph.m} {mode}"]
    lines += [f"{i} {j}" for i, j in graph.edges]
    return "\n".join(lines) + "\n"


def numbered_lines(text: str) -> list[tuple[int, str]]:
    """Non-empty, non-comment lines of `text` with their 1-based numbers."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped and not stripped.startswith("#"):
            out.append((lineno, stripped))
    return out


def parse_graph_lines(lines: list[tuple[int, str]]) -> NominalGraph:
    """Parse the graph section: header ``n m mode`` then one edge per line.

    `lines` are (1-based line number, content) pairs; numbers are carried
    into parse errors.
    """
    if not lines:
        raise CaseParseError(0, "missing graph header 'n m mode'")
    first_line, header = lines[0]
    head = header.split()
    if len(head) != 3:
        raise CaseParseError(first_line, f"expected 'n m mode', got {header!r}")
    try:
        n, m = int(head[0]), int(head[1])
    except ValueError:
        raise CaseParseError(first_line, f"non-integer node/edge count in {header!r}") from None
    mode = head[2].lower()
    if mode not in ("undirected", "directed"):
        raise CaseParseError(first_line, f"mode must be undirected|directed, got {head[2]!r}")
    if len(lines) - 1 < m:
        raise CaseParseError(lines[-1][0], f"expected {m} edge lines, found {len(lines) - 1}")
    if len(lines) - 1 > m:
        raise CaseParseError(lines[1 + m][0], f"unexpected content after {m} edge lines")
    edges = []
    for lineno, content in lines[1 : 1 + m]:
        parts = content.split()
        if len(parts) != 2:
            raise CaseParseError(lineno, f"expected 'i j', got {content!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise CaseParseError(lineno, f"non-integer endpoint in {content!r}") from None
    try:
        return NominalGraph(n, edges, directed=(mode == "directed"))
    except InvalidGraphError as exc:
        raise CaseParseError(first_line, str(exc)) from exc


def load_graph(path) -> NominalGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_graph_lines(numbered_lines(fh.read()))
