"""Ground-truth computations used to validate the distributed iterates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mcons.errors import ConvergenceError, DegenerateSpectrum, ManifoldError
from mcons.manifolds import Grassmann, ManifoldPoint, Sphere

MAX_POWER_ITERS = 200_000


@dataclass(frozen=True)
class OracleSolution:
    kind: str
    value: ManifoldPoint
    residual: float
    eigenvalues: np.ndarray | None = None


def _fix_signs(V):
    """Flip columns so that each one's first clearly nonzero entry is positive."""
    V = V.copy()
    for l in range(V.shape[1]):
        col = V[:, l]
        k = int(np.flatnonzero(np.abs(col) > 1e-12 * np.max(np.abs(col)))[0])
        if col[k] < 0:
            V[:, l] = -col
    return V


def _top_eigenpairs(A, k, tol):
    """Shifted block power iteration with Rayleigh-Ritz extraction of the top k pairs.

    The Gershgorin shift makes A + sI positive semidefinite, so "largest" means
    algebraically largest. A few guard vectors beyond k speed up convergence.
    """
    n = A.shape[0]
    radius = np.sum(np.abs(A), axis=1) - np.abs(np.diag(A))
    shift = max(0.0, -float(np.min(np.diag(A) - radius)))
    B = A + shift * np.eye(n)
    p = min(n, k + max(4, k))
    V = np.linalg.qr(np.random.default_rng(0).standard_normal((n, p)))[0]
    scale = max(1.0, float(np.max(np.abs(A))))
    best = np.inf
    stall = 0
    for _ in range(MAX_POWER_ITERS):
        V = np.linalg.qr(B @ V)[0]
        theta, S = np.linalg.eigh(V.T @ (A @ V))
        order = np.argsort(theta)[::-1]
        theta, V = theta[order], V @ S[:, order]
        res = float(np.max(np.linalg.norm(A @ V[:, :k] - V[:, :k] * theta[:k], axis=0)))
        if res <= tol * scale:
            break
        # rounding floor reached: stop once the residual stops improving
        if res < 0.999 * best:
            best, stall = res, 0
        else:
            stall += 1
            if stall > 50 and res <= 1e-8 * scale:
                break
    return theta[:k], V[:, :k]


def _check_symmetric(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(A, A.T, rtol=0, atol=1e-10 * max(1.0, np.max(np.abs(A)))):
        raise ValueError("matrix is not symmetric")
    return 0.5 * (A + A.T)


def _gap_check(theta, r):
    if len(theta) > r and theta[r - 1] - theta[r] < 1e-10 * max(1.0, abs(theta[0])):
        raise DegenerateSpectrum(
            f"degenerate leading eigenvalue: lambda_{r} - lambda_{r + 1} = {theta[r - 1] - theta[r]:.3g}"
        )


def leading_eigenvector(A, tol=1e-13):
    A = _check_symmetric(A)
    k = min(2, A.shape[0])
    theta, V = _top_eigenpairs(A, k, tol)
    _gap_check(theta, 1)
    v = _fix_signs(V[:, :1])
    res = float(np.linalg.norm(A @ v - theta[0] * v))
    return OracleSolution("eigvec", ManifoldPoint(Sphere(A.shape[0]), v), res, theta[:1])


def top_subspace(A, r, tol=1e-13):
    A = _check_symmetric(A)
    n = A.shape[0]
    if not 0 < r <= n:
        raise ValueError(f"need 0 < r <= {n}")
    theta, V = _top_eigenpairs(A, min(r + 1, n), tol)
    _gap_check(theta, r)
    W = _fix_signs(V[:, :r])
    M = W.T @ A @ W
    res = float(np.linalg.norm(A @ W - W @ M))
    return OracleSolution("subspace", ManifoldPoint(Grassmann(n, r), W), res, theta[:r])


def _frechet(m, X, tol, max_iter, start=None):
    x = (X[0] if start is None else start).copy()
    N = X.shape[0]
    for _ in range(max_iter):
        try:
            L = m.log(x, X)
        except ManifoldError:
            break
        step = L.sum(axis=0) / N
        res = float(m.norm(x, step))
        if res <= tol:
            return x, res
        x = m.exp(x, step)
    raise ConvergenceError("points not in a convex ball")


def frechet_mean(points, tol=1e-12, max_iter=10_000):
    """Karcher mean by the fixed point x <- exp(x, mean_i log_x(w^i)).

    ``points`` is a list of ManifoldPoints or a Configuration.
    """
    if hasattr(points, "coords") and hasattr(points, "manifold"):
        m, X = points.manifold, points.coords
    else:
        points = list(points)
        m = points[0].descriptor
        X = np.stack([p.coords for p in points])
    x, res = _frechet(m, X, tol, max_iter)
    return OracleSolution("frechet_mean", ManifoldPoint(m, x, check=False), res)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    points: np.ndarray
    values: np.ndarray
    terminal_grad_norm: float


def flow_integrate(cost, x0, dt, horizon, stop_grad=None):
    """Geodesic Euler integration of dw/dt = -grad f(w).

    ``cost`` exposes ``manifold``, ``global_values`` and ``global_rgrad``
    (a :class:`~mcons.costs.CostStack` does). Integration stops early once the
    gradient norm falls to ``stop_grad``.
    """
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    if dt > 1e-3 * horizon * (1 + 1e-12):
        raise ValueError("dt must be at most 1e-3 * horizon")
    m = cost.manifold
    x = np.array(x0.coords if hasattr(x0, "coords") else x0, dtype=float)
    steps = int(round(horizon / dt))
    pts = [x]
    vals = [float(cost.global_values(x))]
    g = cost.global_rgrad(x)
    gn = float(m.norm(x, g))
    for _ in range(steps):
        if stop_grad is not None and gn <= stop_grad:
            break
        x = m.exp(x, -dt * g)
        g = cost.global_rgrad(x)
        gn = float(m.norm(x, g))
        pts.append(x)
        vals.append(float(cost.global_values(x)))
    times = dt * np.arange(len(pts))
    return Trajectory(times, np.stack(pts), np.array(vals), gn)


@dataclass(frozen=True)
class FlowComparison:
    sup_distance: float
    times: np.ndarray
    distances: np.ndarray


def compare_to_flow(iterates, steps, cost, T, dt=None):
    """Sup distance over [0, T] between the geodesic interpolant of the iterates and the flow.

    ``iterates[n]`` sits at time ``t_n = sum_{k<n} steps[k]``; the flow starts at
    ``iterates[0]``. ``dt`` defaults to a fiftieth of the smallest step.
    """
    m = cost.manifold
    W = np.asarray(iterates, dtype=float)
    a = np.broadcast_to(np.asarray(steps, dtype=float), (W.shape[0] - 1,))
    t_grid = np.concatenate([[0.0], np.cumsum(a)])
    if t_grid[-1] < T * (1 - 1e-12):
        raise ValueError(f"iterates cover t = {t_grid[-1]:.4g} < T = {T}")
    if dt is None:
        dt = min(float(np.min(a)) / 50.0, 1e-3 * T)
    flow = flow_integrate(cost, W[0], dt, T)
    idx = np.clip(np.searchsorted(t_grid, flow.times, side="right") - 1, 0, len(a) - 1)
    frac = ((flow.times - t_grid[idx]) / a[idx])[:, None, None]
    start = W[idx]
    y = m.exp(start, frac * m.log(start, W[idx + 1]))
    d = np.asarray(m.dist(y, flow.points), dtype=float)
    return FlowComparison(float(np.max(d)), flow.times, d)


def fd_gradient_check(f, grad, x, directions=20, t=1e-5, stream=None):
    """Max relative error of central differences against <grad f(x), v>.

    ``x`` carries ``coords`` and a manifold (a ManifoldPoint or a Configuration,
    whose stacked coordinates form the product manifold). ``f`` maps coordinate
    arrays to floats and ``grad`` maps them to the Riemannian gradient array.
    The error is normalized by ``max(||grad||, 1e-8)``.
    """
    if not 1e-7 <= t <= 1e-3:
        raise ValueError("t must lie in [1e-7, 1e-3]")
    m = getattr(x, "manifold", None) or x.descriptor
    X = x.coords
    rng = stream if stream is not None else np.random.default_rng(0)
    G = np.asarray(grad(X))
    gnorm = max(float(np.sqrt(np.sum(G * G))), 1e-8)
    worst = 0.0
    for _ in range(directions):
        V = m.proj(X, rng.standard_normal(X.shape))
        while np.sum(V * V) < 1e-24:  # the draw was (numerically) normal to the manifold
            V = m.proj(X, rng.standard_normal(X.shape))
        V = V / np.sqrt(np.sum(V * V))
        fd = (f(m.exp(X, t * V)) - f(m.exp(X, -t * V))) / (2.0 * t)
        worst = max(worst, abs(fd - float(np.sum(G * V))) / gnorm)
    return worst
