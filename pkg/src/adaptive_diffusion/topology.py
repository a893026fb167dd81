"""Network graphs: construction, assumption checks and spectral constants.

Nodes are indexed from 0.  A topology is a weighted adjacency matrix
``A`` whose entry ``A[i, j] > 0`` means node ``i`` listens to node ``j``
during the combination step.
"""

from __future__ import annotations

import itertools
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    ConstraintError,
    ParameterError,
    PreconditionError,
    ResourceGuardError,
    StructuralError,
)

STOCHASTIC_TOL = 1e-12
SYMMETRY_TOL = 1e-12
GAP_FLOOR = 1e-10
CHEEGER_MAX_NODES = 20


def _as_square(adjacency) -> np.ndarray:
    a = np.array(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise StructuralError(f"adjacency must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise StructuralError("adjacency contains non-finite entries")
    neg = np.argwhere(a < 0)
    if len(neg):
        i, j = neg[0]
        raise StructuralError(f"negative weight a[{i},{j}] = {a[i, j]!r}")
    return a


@dataclass(frozen=True)
class NetworkTopology:
    """Immutable weighted digraph with ``n`` nodes."""

    adjacency: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        a = _as_square(self.adjacency)
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "n", a.shape[0])

    @property
    def directed_edges(self) -> frozenset[tuple[int, int]]:
        return frozenset(map(tuple, np.argwhere(self.adjacency > 0).tolist()))

    @property
    def row_stochastic(self) -> bool:
        return bool(np.all(np.abs(self.adjacency.sum(axis=1) - 1.0) <= STOCHASTIC_TOL))

    @property
    def doubly_stochastic(self) -> bool:
        return self.row_stochastic and bool(
            np.all(np.abs(self.adjacency.sum(axis=0) - 1.0) <= STOCHASTIC_TOL)
        )

    @property
    def symmetric(self) -> bool:
        return bool(np.max(np.abs(self.adjacency - self.adjacency.T)) <= SYMMETRY_TOL)

    def permuted(self, perm: Sequence[int]) -> "NetworkTopology":
        """Relabel nodes: new node ``k`` is old node ``perm[k]``."""
        p = np.asarray(perm)
        return NetworkTopology(self.adjacency[np.ix_(p, p)])


@dataclass(frozen=True)
class ValidationReport:
    doubly_stochastic: bool
    irreducible: bool
    aperiodic: bool
    gram_irreducible: bool
    period: int | None
    row_sum_residual: float
    col_sum_residual: float

    @property
    def a1(self) -> bool:
        return self.doubly_stochastic and self.irreducible and self.aperiodic and self.gram_irreducible

    @property
    def a1_prime(self) -> bool:
        return self.irreducible

    def as_dict(self) -> dict:
        return {
            "doubly_stochastic": self.doubly_stochastic,
            "irreducible": self.irreducible,
            "aperiodic": self.aperiodic,
            "gram_irreducible": self.gram_irreducible,
            "period": self.period,
            "row_sum_residual": self.row_sum_residual,
            "col_sum_residual": self.col_sum_residual,
            "A1": self.a1,
            "A1_prime": self.a1_prime,
        }


def _strongly_connected(support: np.ndarray) -> bool:
    if support.shape[0] == 1:
        return True
    count, _ = connected_components(support.astype(np.int8), directed=True, connection="strong")
    return count == 1


def graph_period(support: np.ndarray) -> int:
    """Period of a strongly connected digraph given by a boolean matrix.

    BFS levels from node 0; the period is the gcd of
    ``level[u] + 1 - level[v]`` over all edges ``u -> v``.  This equals the
    gcd of all closed-walk lengths through any node.
    """
    n = support.shape[0]
    level = [-1] * n
    level[0] = 0
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(support[u]):
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
    if min(level) < 0:
        raise PreconditionError("graph_period requires a strongly connected graph")
    g = 0
    for u, v in np.argwhere(support):
        g = math.gcd(g, abs(level[u] + 1 - level[v]))
    return g


def check_assumption_a1(topology: NetworkTopology | np.ndarray) -> ValidationReport:
    """Check the structural assumptions on the combination matrix.

    Reports double stochasticity, irreducibility, aperiodicity and
    irreducibility of ``A.T @ A``; ``report.a1`` combines all four and
    ``report.a1_prime`` needs irreducibility only.
    """
    a = topology.adjacency if isinstance(topology, NetworkTopology) else _as_square(topology)
    row_res = float(np.max(np.abs(a.sum(axis=1) - 1.0)))
    col_res = float(np.max(np.abs(a.sum(axis=0) - 1.0)))
    ds = row_res <= STOCHASTIC_TOL and col_res <= STOCHASTIC_TOL
    support = a > 0
    irreducible = _strongly_connected(support)
    period = graph_period(support) if irreducible else None
    gram = _strongly_connected((a.T @ a) > 0)
    return ValidationReport(
        doubly_stochastic=ds,
        irreducible=irreducible,
        aperiodic=period == 1,
        gram_irreducible=gram,
        period=period,
        row_sum_residual=row_res,
        col_sum_residual=col_res,
    )


def _connected_undirected(n: int, edges: Iterable[tuple[int, int]]) -> bool:
    adj = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        adj[i, j] = adj[j, i] = True
    count, _ = connected_components(adj.astype(np.int8), directed=False)
    return count == 1


def build_standard_topology(kind: str, n: int, **params) -> NetworkTopology:
    """Build one of the stock topologies.

    Parameters
    ----------
    kind : {"ring_self_loops", "complete_uniform", "metropolis"}
    n : int
        Node count.
    self_weight : float, optional
        Diagonal weight of ``ring_self_loops`` (default 0.5); the rest is
        split evenly between the two ring neighbours.
    edges : iterable of (i, j), required for ``metropolis``
        Undirected edge list; must describe a connected graph.
    """
    if n < 1:
        raise ParameterError(f"n must be positive, got {n}")
    if kind == "complete_uniform":
        return NetworkTopology(np.full((n, n), 1.0 / n))
    if kind == "ring_self_loops":
        w = float(params.pop("self_weight", 0.5))
        if not 0.0 < w <= 1.0:
            raise ParameterError(f"self_weight must lie in (0, 1], got {w}")
        a = np.zeros((n, n))
        if n == 1:
            a[0, 0] = 1.0
        else:
            side = (1.0 - w) / 2.0
            for i in range(n):
                a[i, i] += w
                a[i, (i + 1) % n] += side
                a[i, (i - 1) % n] += side
        _reject_extra(params)
        return NetworkTopology(a)
    if kind == "metropolis":
        edges = [tuple(map(int, e)) for e in params.pop("edges", ())]
        _reject_extra(params)
        edges = [(i, j) for i, j in edges if i != j]
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise StructuralError(f"edge ({i}, {j}) out of range for n={n}")
        if n > 1 and not _connected_undirected(n, edges):
            raise ConstraintError("metropolis weights need a connected edge list")
        nbrs = [set() for _ in range(n)]
        for i, j in edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        deg = [len(s) for s in nbrs]
        a = np.zeros((n, n))
        for i in range(n):
            for j in nbrs[i]:
                a[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
            a[i, i] = 1.0 - a[i].sum()
        return NetworkTopology(a)
    raise ParameterError(f"unknown topology kind {kind!r}")


def _reject_extra(params: dict):
    if params:
        raise ParameterError(f"unexpected topology parameters: {sorted(params)}")


def random_symmetric_doubly_stochastic(n: int, rng: np.random.Generator, density: float = 0.6,
                                       iterations: int = 200, max_tries: int = 100) -> NetworkTopology:
    """Random symmetric doubly stochastic matrix with a connected support.

    Symmetric Sinkhorn scaling of a random positive kernel on a random
    connected support with a positive diagonal.  Draws whose residual
    stays above 1e-10 after ``iterations`` sweeps are rejected.
    """
    for _ in range(max_tries):
        mask = np.triu(rng.random((n, n)) < density, 1)
        mask = mask | mask.T | np.eye(n, dtype=bool)
        if n > 1 and connected_components(mask.astype(np.int8), directed=False)[0] != 1:
            continue
        k = rng.uniform(0.05, 1.0, size=(n, n))
        k = np.where(mask, (k + k.T) / 2.0, 0.0)
        d = np.ones(n)
        for _ in range(iterations):
            d = np.sqrt(d / (k @ d))
        a = d[:, None] * k * d[None, :]
        a = (a + a.T) / 2.0
        if np.max(np.abs(a.sum(axis=1) - 1.0)) > 1e-10:
            continue
        # polish to the 1e-12 doubly stochastic tolerance
        for _ in range(5):
            a = a / a.sum(axis=1, keepdims=True)
            a = (a + a.T) / 2.0
        if np.max(np.abs(a.sum(axis=1) - 1.0)) <= STOCHASTIC_TOL:
            return NetworkTopology(a)
    raise ConstraintError("could not generate a doubly stochastic matrix within the retry budget")


def _require_symmetric_ds(top: NetworkTopology, what: str):
    if not top.symmetric:
        raise PreconditionError(f"{what} requires a symmetric adjacency (tolerance {SYMMETRY_TOL})")
    if not top.doubly_stochastic:
        raise PreconditionError(f"{what} requires a doubly stochastic adjacency")


def laplacian_gap(topology: NetworkTopology) -> float:
    """Smallest eigenvalue of ``I - A`` above 1e-10 (0 for a single node)."""
    _require_symmetric_ds(topology, "laplacian_gap")
    if topology.n == 1:
        return 0.0
    lap = np.eye(topology.n) - topology.adjacency
    ev = np.linalg.eigvalsh((lap + lap.T) / 2.0)
    positive = ev[ev > GAP_FLOOR]
    return float(positive.min()) if len(positive) else 0.0


def cheeger_constant(topology: NetworkTopology) -> float:
    """Exhaustive Cheeger constant with unit vertex volume.

    ``min_S w(S, S^c) / min(|S|, n - |S|)`` over nonempty proper subsets.
    Returns ``inf`` for a single node.
    """
    _require_symmetric_ds(topology, "cheeger_constant")
    n = topology.n
    if n > CHEEGER_MAX_NODES:
        raise ResourceGuardError(f"cheeger_constant enumerates 2^n cuts; n={n} exceeds {CHEEGER_MAX_NODES}")
    if n == 1:
        return math.inf
    a = topology.adjacency
    best = math.inf
    # node n-1 is always outside S: each cut is visited once
    total = 1 << (n - 1)
    chunk = 1 << 14
    bits = np.arange(n - 1)
    for start in range(1, total, chunk):
        masks = np.arange(start, min(start + chunk, total))
        inside = np.zeros((len(masks), n))
        inside[:, : n - 1] = (masks[:, None] >> bits) & 1
        size = inside.sum(axis=1)
        cut = np.einsum("si,ij,sj->s", inside, a, 1.0 - inside)
        ratio = cut / np.minimum(size, n - size)
        best = min(best, float(ratio.min()))
    return best


@dataclass(frozen=True)
class SpectralReport:
    h: int
    laplacian_gap: float | None
    cheeger: float | None
    s_symmetric: float | None
    s_generic_bound: float | None
    path: tuple[int, ...] = ()
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {
            "h": self.h,
            "laplacian_gap": self.laplacian_gap,
            "cheeger": self.cheeger,
            "s_symmetric": self.s_symmetric,
            "s_generic_bound": self.s_generic_bound,
            "path": list(self.path),
            "degenerate": self.degenerate,
        }


def _shortest_path(support: np.ndarray, src: int, dst: int) -> list[int]:
    prev = {src: None}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        if u == dst:
            break
        for v in np.flatnonzero(support[u]):
            v = int(v)
            if v not in prev:
                prev[v] = u
                queue.append(v)
    if dst not in prev:
        raise PreconditionError(f"no path {src} -> {dst} in the support of A^T A")
    path = [dst]
    while path[-1] != src:
        path.append(prev[path[-1]])
    return path[::-1]


def gram_path(topology: NetworkTopology) -> list[int]:
    """Walk ``b_1..b_q`` through ``A^T A`` visiting nodes 0, 1, ..., n-1 in order.

    Concatenates shortest paths ``i -> i+1``; consecutive entries are
    joined by positive entries of ``A^T A``.
    """
    a = topology.adjacency
    gram = a.T @ a
    support = gram > 0
    np.fill_diagonal(support, False)
    walk = [0]
    for i in range(topology.n - 1):
        walk.extend(_shortest_path(support, i, i + 1)[1:])
    return walk


def generic_s_supremum(topology: NetworkTopology, h: int) -> tuple[float, list[int]]:
    n = topology.n
    walk = gram_path(topology)
    q = len(walk)
    gram = topology.adjacency.T @ topology.adjacency
    weakest = min(gram[u, v] for u, v in zip(walk, walk[1:]))
    return weakest / (512.0 * h**3 * n**4 * q * (1.0 + n**2)), walk


def spectral_constant_s(topology: NetworkTopology, h: int = 1, mode: str = "auto") -> SpectralReport:
    """Contraction constants for the block product of ``(A kron I) diag(A_k)``.

    ``s_symmetric`` is ``min_i a_ii * gap / (32 n (1 + 4h)^2)`` and needs a
    symmetric ``A`` with a positive diagonal.  ``s_generic_bound`` is half
    of the path-based supremum and needs assumption A1.

    ``mode`` is ``"auto"`` (compute what applies), ``"symmetric"`` (raise if
    the symmetric formula does not apply) or ``"generic"``.
    """
    if h < 1:
        raise ParameterError(f"h must be a positive integer, got {h}")
    if mode not in ("auto", "symmetric", "generic"):
        raise ParameterError(f"unknown mode {mode!r}")
    if topology.n == 1:
        warnings.warn("single node: no diffusion, s degenerates to the sentinel 1", stacklevel=2)
        return SpectralReport(h=h, laplacian_gap=0.0, cheeger=math.inf, s_symmetric=1.0,
                              s_generic_bound=1.0, path=(0,), degenerate=True)
    gap = cheeger = s_sym = s_gen = None
    walk: list[int] = []
    if mode in ("auto", "symmetric"):
        sym_ok = topology.symmetric and topology.doubly_stochastic
        if mode == "symmetric" and not sym_ok:
            raise PreconditionError("symmetric mode needs a symmetric doubly stochastic adjacency")
        if sym_ok:
            diag_min = float(np.min(np.diag(topology.adjacency)))
            if diag_min <= 0.0:
                if mode == "symmetric":
                    raise PreconditionError("symmetric formula needs a_ii > 0 for every node")
            else:
                gap = laplacian_gap(topology)
                s_sym = diag_min * gap / (32.0 * topology.n * (1.0 + 4.0 * h) ** 2)
            gap = laplacian_gap(topology) if gap is None else gap
            if topology.n <= CHEEGER_MAX_NODES:
                cheeger = cheeger_constant(topology)
    if mode in ("auto", "generic"):
        report = check_assumption_a1(topology)
        if report.a1:
            sup, walk = generic_s_supremum(topology, h)
            s_gen = 0.5 * sup
        elif mode == "generic":
            raise PreconditionError("generic bound needs assumption A1")
    return SpectralReport(h=h, laplacian_gap=gap, cheeger=cheeger, s_symmetric=s_sym,
                          s_generic_bound=s_gen, path=tuple(walk))


def consensus_residual(topology: NetworkTopology, power: int = 512) -> float:
    """``max |A^K - 11^T / n|``; tends to 0 under assumption A1."""
    n = topology.n
    return float(np.max(np.abs(np.linalg.matrix_power(topology.adjacency, power) - 1.0 / n)))


def topology_from_config(spec: dict) -> NetworkTopology:
    """Build a topology from the ``topology`` section of an experiment config."""
    spec = dict(spec)
    matrix = spec.pop("matrix", None)
    kind = spec.pop("kind", None)
    n = spec.pop("n", None)
    if matrix is not None:
        values = np.asarray(matrix, dtype=float).ravel()
        size = int(round(math.sqrt(len(values))))
        if size * size != len(values):
            raise StructuralError(f"topology.matrix has {len(values)} entries, not a perfect square")
        if n is not None and n != size:
            raise StructuralError(f"topology.n={n} but topology.matrix is {size}x{size}")
        a = values.reshape(size, size)
        for i, j in itertools.product(range(size), repeat=2):
            if a[i, j] < 0:
                raise StructuralError(f"topology.matrix[{i}][{j}] = {a[i, j]!r} is negative")
        return NetworkTopology(a)
    params = {k: v for k, v in spec.items() if v is not None}
    return build_standard_topology(kind, int(n), **params)
