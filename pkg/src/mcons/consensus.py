"""Riemannian consensus: the edge potential, its gradient, and the S_conv safeguard."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mcons.errors import ManifoldError, NotLocallyComparable
from mcons.kernels._numpy import GRASSMANN_MIN_COS, SPHERE_CUT
from mcons.manifolds import ManifoldPoint, TangentVector


@dataclass(frozen=True, eq=False)
class Configuration:
    """Stacked node estimates ``coords[i]`` (shape ``(N, n, r)``) on one manifold."""

    manifold: object
    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if c.ndim == 2 and self.manifold.cols == 1:
            c = c[:, :, None]
        if c.ndim != 3 or c.shape[1:] != self.manifold.shape:
            raise ManifoldError(f"expected (N, {self.manifold.shape}) coordinates, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @classmethod
    def from_points(cls, points):
        points = list(points)
        if not points:
            raise ValueError("configuration needs at least one point")
        m = points[0].descriptor
        if any(p.descriptor != m for p in points):
            raise ManifoldError("all points of a configuration must share one manifold")
        return cls(m, np.stack([p.coords for p in points]))

    @property
    def descriptor(self):
        return self.manifold

    @property
    def points(self):
        return [ManifoldPoint(self.manifold, c, check=False) for c in self.coords]

    def __len__(self):
        return self.coords.shape[0]

    def replace(self, coords):
        return Configuration(self.manifold, coords)


@dataclass(frozen=True)
class ConsensusParams:
    """Consensus step size and the quantities that define S_conv.

    ``mu_max`` may be None when the step size was fixed without estimating the
    Hessian bound; otherwise ``epsilon`` must lie in ``(0, 2 / mu_max)``.
    """

    epsilon: float
    r_c: float
    g_diam: int
    mu_max: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.mu_max is not None and not self.epsilon < 2.0 / self.mu_max:
            raise ValueError(
                f"epsilon={self.epsilon} violates epsilon < 2/mu_max = {2.0 / self.mu_max}"
            )

    @property
    def s_conv_threshold(self):
        if not np.isfinite(self.r_c):
            return np.inf
        return self.r_c**2 / (2.0 * self.g_diam)


def make_params(manifold, graph, epsilon, mu_max=None):
    return ConsensusParams(
        epsilon=float(epsilon),
        r_c=manifold.convexity_radius,
        g_diam=max(graph.diameter, 1),
        mu_max=mu_max,
    )


def potential_from_dist(D2, weights):
    """Half the weighted sum of squared distances over undirected edges."""
    return 0.25 * float(np.sum(weights * D2))


def check_comparable(manifold, X, weights):
    """Raise if some edge pair sits on or beyond the cut locus."""
    i, j = np.nonzero(np.triu(weights, 1))
    if i.size == 0:
        return
    if manifold.kind == "sphere":
        th = manifold.dist(X[i], X[j])
        bad = th >= SPHERE_CUT
    elif manifold.kind == "grassmann":
        cos_max = np.cos(manifold.principal_angles(X[i], X[j])[..., -1])
        bad = cos_max <= GRASSMANN_MIN_COS
    else:
        return
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise NotLocallyComparable(
            f"configuration not locally comparable: edge ({i[k]}, {j[k]}) spans the cut locus"
        )


def potential(w, g):
    """phi(w) = 1/2 sum_{edges} q_ij d^2(w^i, w^j)."""
    W = g.edge_weights
    check_comparable(w.manifold, w.coords, W)
    return potential_from_dist(w.manifold.pair_dist_sq(w.coords), W)


def potential_unweighted(w, g):
    """Edge potential without the q_ij factors; this is what S_conv bounds."""
    check_comparable(w.manifold, w.coords, g.edge_weights)
    return potential_from_dist(w.manifold.pair_dist_sq(w.coords), g.adjacency.astype(float))


def consensus_gradients(w, g):
    """All per-node gradients of phi, as an (N, n, r) array: -sum_j q_ij log_{w^i} w^j."""
    return w.manifold.consensus_grad(w.coords, g.edge_weights)


def grad_potential(w, g, i):
    G = consensus_gradients(w, g)
    base = ManifoldPoint(w.manifold, w.coords[i], check=False)
    return TangentVector(base, G[i], check=False)


def consensus_step(w, g, params):
    """One synchronous Riemannian gradient step on phi (every node reads the old w)."""
    m = w.manifold
    G = consensus_gradients(w, g)
    return w.replace(m.retr(w.coords, -params.epsilon * G))


def in_s_conv(w, g, params):
    thr = params.s_conv_threshold
    if not np.isfinite(thr):
        return True
    return potential_unweighted(w, g) <= thr


def max_pair_dist_sq(w):
    return float(np.max(w.manifold.pair_dist_sq(w.coords)))


def estimate_mu_max(w, g, samples, stream, t=1e-3, spread=0.1, safety=1.2):
    """Sampled upper estimate of the largest curvature of phi along geodesics.

    Each sample perturbs ``w`` (except the first, which is ``w`` itself) and
    probes two unit directions of the product tangent space with a central
    second difference of step ``t``: one isotropic, one shaped like the top
    eigenvector of the weighted graph Laplacian (where phi curves most near
    consensus). The maximum is scaled by ``safety``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    m = w.manifold
    W = g.edge_weights
    lap = np.diag(W.sum(axis=1)) - W
    top = np.linalg.eigh(lap)[1][:, -1]

    def phi(X):
        return potential_from_dist(m.pair_dist_sq(X), W)

    best = 0.0
    for s in range(samples):
        X = w.coords if s == 0 else m.exp(w.coords, m.random_tangent(w.coords, spread, stream))
        f0 = phi(X)
        iso = m.random_tangent(X, 1.0, stream)
        shaped = m.proj(X, top[:, None, None] * stream.standard_normal(m.shape))
        for V in (iso, shaped):
            nv = np.sqrt(np.sum(V * V))
            if nv == 0:
                continue
            V = V / nv
            h = (phi(m.exp(X, t * V)) - 2.0 * f0 + phi(m.exp(X, -t * V))) / t**2
            best = max(best, h)
    if best <= 0:
        # flat directions only (e.g. a single node); any finite step is admissible
        best = 1.0 / safety
    return safety * best
