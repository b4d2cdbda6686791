"""Communication graphs and doubly stochastic gossip matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csgraph

from mcons.errors import GraphNotConnected

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected connected graph with a symmetric doubly stochastic weight matrix.

    ``spectral_gap_norm`` is the spectral norm of ``Q - 11^T/N`` (called gamma
    elsewhere); ``lazy`` records whether ``Q`` was mixed with the identity to
    make the chain aperiodic.
    """

    adjacency: np.ndarray
    weights: np.ndarray
    diameter: int
    spectral_gap_norm: float
    lazy: bool = False
    _powers: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_nodes(self):
        return self.weights.shape[0]

    @property
    def edges(self):
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    @property
    def edge_weights(self):
        """Off-diagonal part of ``Q`` (the per-edge weights q_ij)."""
        w = self.weights.copy()
        np.fill_diagonal(w, 0.0)
        return w


def _check_adjacency(adjacency):
    a = np.asarray(adjacency).astype(bool)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjacency must be a square matrix")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(a)):
        raise ValueError("adjacency must have a zero diagonal")
    return a


def is_connected(adjacency):
    a = np.asarray(adjacency, dtype=bool)
    if a.shape[0] == 1:
        return True
    n_comp, _ = csgraph.connected_components(a.astype(np.int8), directed=False)
    return n_comp == 1


def metropolis_weights(adjacency):
    """Metropolis-Hastings weights q_ij = 1 / (1 + max(deg_i, deg_j)) on edges.

    If no self-weight ends up positive (regular graphs can produce this) the
    lazy chain (Q + I) / 2 is returned instead, flagged by ``lazy=True``.
    """
    a = _check_adjacency(adjacency)
    if not is_connected(a):
        raise GraphNotConnected("graph not connected")
    deg = a.sum(axis=1)
    Q = np.where(a, 1.0 / (1.0 + np.maximum(deg[:, None], deg[None, :])), 0.0)
    np.fill_diagonal(Q, 1.0 - Q.sum(axis=1))
    lazy = False
    if not np.any(np.diag(Q) > 0):
        Q = 0.5 * (Q + np.eye(len(Q)))
        lazy = True
    return NetworkGraph(
        adjacency=a,
        weights=Q,
        diameter=graph_diameter(a),
        spectral_gap_norm=_gamma(Q),
        lazy=lazy,
    )


def _gamma(Q):
    N = Q.shape[0]
    ev = np.linalg.eigvalsh(Q - np.full((N, N), 1.0 / N))
    return float(np.max(np.abs(ev)))


def spectral_gap(g):
    """Spectral norm of ``Q - 11^T/N``; symmetric, so the largest |eigenvalue|."""
    return _gamma(g.weights)


def matrix_power(g, n):
    """Q^n by repeated squaring, memoized on the graph."""
    n = int(n)
    if n < 1:
        raise ValueError("power must be >= 1")
    cached = g._powers.get(n)
    if cached is not None:
        return cached
    P = np.linalg.matrix_power(g.weights, n)
    P.setflags(write=False)
    g._powers[n] = P
    return P


def delta(g, n):
    """max_pq |(Q^n)_pq - 1/N|."""
    return float(np.max(np.abs(matrix_power(g, n) - 1.0 / g.num_nodes)))


def graph_diameter(g):
    a = g.adjacency if isinstance(g, NetworkGraph) else np.asarray(g, dtype=bool)
    if a.shape[0] == 1:
        return 0
    dist = csgraph.shortest_path(a.astype(np.int8), method="D", unweighted=True, directed=False)
    if not np.all(np.isfinite(dist)):
        raise GraphNotConnected("graph not connected")
    return int(dist.max())


def random_connected_graph(n, edge_prob, seed, max_attempts=1000):
    """Erdos-Renyi G(n, p) adjacency, redrawn until connected."""
    if n < 2:
        raise ValueError("need at least two nodes")
    if not 0 < edge_prob <= 1:
        raise ValueError("edge_prob must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    for _ in range(max_attempts):
        a = np.zeros((n, n), dtype=bool)
        a[iu] = rng.random(len(iu[0])) < edge_prob
        a |= a.T
        if is_connected(a):
            return a
    raise GraphNotConnected(
        f"no connected draw in {max_attempts} attempts; increase edge_prob (now {edge_prob})"
    )


def ring_adjacency(n):
    a = np.zeros((n, n), dtype=bool)
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = True
    return a


def path_adjacency(n):
    a = np.zeros((n, n), dtype=bool)
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = True
    return a


def complete_adjacency(n):
    return ~np.eye(n, dtype=bool)


def write_edge_list(adjacency, path):
    a = _check_adjacency(adjacency)
    i, j = np.nonzero(np.triu(a, 1))
    with open(path, "w") as fh:
        for p, q in zip(i.tolist(), j.tolist()):
            fh.write(f"{p} {q}\n")


def read_edge_list(path, num_nodes=None):
    """Parse whitespace ``i j`` pairs (0-indexed); blank lines and ``#`` comments skipped."""
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'i j', got {line!r}")
            try:
                p, q = int(parts[0]), int(parts[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: node indices must be integers, got {line!r}") from None
            if p == q or p < 0 or q < 0:
                raise ValueError(f"{path}:{lineno}: invalid edge {p} {q}")
            pairs.append((p, q))
    n = num_nodes if num_nodes is not None else (max(max(e) for e in pairs) + 1 if pairs else 1)
    a = np.zeros((n, n), dtype=bool)
    for p, q in pairs:
        if p >= n or q >= n:
            raise ValueError(f"edge {p} {q} exceeds node count {n}")
        a[p, q] = a[q, p] = True
    return a


def consensus_rounds_for(g, target):
    """Smallest n >= 1 with gamma^n <= target (1 when gamma == 0)."""
    gamma = g.spectral_gap_norm
    if gamma <= 0.0 or target >= 1.0:
        return 1
    n = max(1, math.ceil(math.log(target) / math.log(gamma)))
    while gamma**n > target:
        n += 1
    while n > 1 and gamma ** (n - 1) <= target:
        n -= 1
    return n
