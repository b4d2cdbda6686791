"""Manifold primitives for the unit sphere, the Grassmannian and Euclidean space.

Points and tangent vectors are ``(n, r)`` float arrays in ambient coordinates
(``r = 1`` for the sphere). All array-level methods broadcast over leading axes,
so a stack of ``N`` node estimates is simply an ``(N, n, r)`` array.

The :class:`ManifoldPoint` / :class:`TangentVector` wrappers and the module-level
functions (:func:`distance`, :func:`exp`, ...) give a checked, value-typed
interface on top of the array methods.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mcons import kernels
from mcons.errors import ManifoldError, OutsideInjectivityRadius

DRIFT_TOL = 1e-12
POINT_TOL = 1e-10


def _dot(a, b):
    return np.sum(a * b, axis=(-2, -1), keepdims=True)


def _is_zero(v):
    return ~np.any(v != 0, axis=(-2, -1), keepdims=True)


def qf(a):
    """Q factor of a thin QR decomposition with a nonnegative diagonal of R."""
    q, r = np.linalg.qr(a)
    d = np.sign(np.diagonal(r, axis1=-2, axis2=-1)).copy()
    d[d == 0] = 1.0
    return q * d[..., None, :]


@dataclass(frozen=True)
class Manifold:
    """Descriptor of a manifold; subclasses implement the geometry.

    ``ambient_rows`` is the ambient dimension ``n`` (the sphere S^n lives in
    R^{n+1}, so ``Sphere(4)`` is S^3); ``cols`` is ``r``.
    """

    kind: str
    ambient_rows: int
    cols: int
    convexity_radius: float
    injectivity_radius: float

    @property
    def shape(self):
        return (self.ambient_rows, self.cols)

    # -- metric --------------------------------------------------------------
    def inner(self, x, u, v):
        return np.sum(u * v, axis=(-2, -1))

    def norm(self, x, u):
        return np.sqrt(self.inner(x, u, u))

    def proj(self, x, a):
        return a - x @ (np.swapaxes(x, -1, -2) @ a)

    # -- sampling ------------------------------------------------------------
    def random_tangent(self, x, sigma, rng):
        if sigma == 0:
            return np.zeros_like(x)
        return self.proj(x, sigma * rng.standard_normal(x.shape))

    # -- invariants ----------------------------------------------------------
    def point_residual(self, x):
        g = np.swapaxes(x, -1, -2) @ x
        return np.max(np.abs(g - np.eye(self.cols)), axis=(-2, -1))

    def tangent_residual(self, x, v):
        return np.max(np.abs(np.swapaxes(x, -1, -2) @ v), axis=(-2, -1))

    def normalize(self, x):
        """Remove rounding drift from points whose invariant residual exceeds 1e-12."""
        bad = self.point_residual(x) > DRIFT_TOL
        if not np.any(bad):
            return x
        return np.where(bad[..., None, None], self._project_point(x), x)

    def _project_point(self, x):
        return qf(x)

    # -- network-level operations (stacks of N points) ------------------------
    def transport_mix(self, src, dst, G, P):
        """Row-mix of transported vectors: out[i] = sum_j P[i,j] T_{src[j] -> dst[i]} G[j]."""
        mixed = np.einsum("ij,jab->iab", P, G)
        return self.proj(dst, mixed)

    def oracle_distance(self, x, target):
        return self.dist(x, target)


class Sphere(Manifold):
    """Unit sphere in R^n with the round metric."""

    def __init__(self, n):
        super().__init__("sphere", int(n), 1, np.pi / 2, np.pi)

    def point_residual(self, x):
        return np.abs(np.sqrt(np.sum(x * x, axis=(-2, -1))) - 1.0)

    def _project_point(self, x):
        return x / np.sqrt(_dot(x, x))

    def dist(self, x, y):
        c = _dot(x, y)
        p = y - c * x
        return np.arctan2(np.sqrt(_dot(p, p)), c)[..., 0, 0]

    def exp(self, x, v):
        nv = np.sqrt(_dot(v, v))
        safe = np.where(nv > 0, nv, 1.0)
        y = np.where(nv > 0, x * np.cos(nv) + v * (np.sin(nv) / safe), x)
        return self.normalize(y)

    def log(self, x, y):
        c = _dot(x, y)
        p = y - c * x
        s = np.sqrt(_dot(p, p))
        t = np.arctan2(s, c)
        if np.any(t >= kernels._numpy.SPHERE_CUT):
            raise OutsideInjectivityRadius("outside injectivity radius: points are antipodal")
        return np.where(s > 0, p * (t / np.where(s > 0, s, 1.0)), 0.0)

    def retr(self, x, v):
        y = x + v
        return np.where(_is_zero(v), x, y / np.sqrt(_dot(y, y)))

    def transp(self, x, y, v):
        c = _dot(x, y)
        p = y - c * x
        s = np.sqrt(_dot(p, p))
        if np.any(np.arctan2(s, c) >= kernels._numpy.SPHERE_CUT):
            raise OutsideInjectivityRadius("outside injectivity radius: points are antipodal")
        r = np.hypot(s, c)
        u = np.where(s > 0, p / np.where(s > 0, s, 1.0), 0.0)
        a = _dot(u, v)
        return v + a * ((c / r - 1.0) * u - (s / r) * x)

    def random_point(self, rng):
        g = rng.standard_normal(self.shape)
        return g / np.sqrt(_dot(g, g))

    def pair_dist_sq(self, X):
        return kernels.sphere_pair_dist_sq(X[..., 0])

    def consensus_grad(self, X, Q):
        return kernels.sphere_consensus_grad(X[..., 0], Q)[..., None]

    def transport_mix(self, src, dst, G, P):
        return kernels.sphere_transport_mix(src[..., 0], dst[..., 0], G[..., 0], P)[..., None]

    def oracle_distance(self, x, target):
        # eigenvector targets are sign-ambiguous: min(d(x, t), d(x, -t))
        c = _dot(x, target)
        p = target - c * x
        return np.arctan2(np.sqrt(_dot(p, p)), np.abs(c))[..., 0, 0]


class Grassmann(Manifold):
    """Grassmannian G(n, r) of r-planes in R^n, via orthonormal n x r representatives.

    Distances are rotation invariant; exp/log/transport act on representatives
    and horizontal vectors (X^T V = 0).
    """

    def __init__(self, n, r):
        n, r = int(n), int(r)
        if not 0 < r <= n:
            raise ManifoldError(f"Grassmann needs 0 < r <= n, got n={n}, r={r}")
        super().__init__("grassmann", n, r, np.pi / 4, np.pi / 2)

    def principal_angles(self, x, y):
        return kernels._numpy._grassmann_angles(x, y)

    def dist(self, x, y):
        th = self.principal_angles(x, y)
        return np.sqrt(np.sum(th * th, axis=-1))

    def exp(self, x, v):
        U, s, Vt = np.linalg.svd(v, full_matrices=False)
        V = np.swapaxes(Vt, -1, -2)
        y = (x @ V) * np.cos(s)[..., None, :] @ Vt + (U * np.sin(s)[..., None, :]) @ Vt
        y = np.where(_is_zero(v), x, y)
        return self.normalize(y)

    def log(self, x, y):
        batch = np.broadcast_shapes(x.shape, y.shape)
        xb = np.broadcast_to(x, batch).reshape((-1,) + self.shape)
        yb = np.broadcast_to(y, batch).reshape((-1,) + self.shape)
        L, status = kernels._numpy.grassmann_log_pairs(xb, yb)
        if status >= 0:
            raise OutsideInjectivityRadius(
                "outside injectivity radius: largest principal angle reaches pi/2"
            )
        return L.reshape(batch)

    def retr(self, x, v):
        return np.where(_is_zero(v), x, qf(x + v))

    def transp(self, x, y, v):
        return self.proj(y, v)

    def random_point(self, rng):
        return qf(rng.standard_normal(self.shape))

    def pair_dist_sq(self, X):
        return kernels.grassmann_pair_dist_sq(X)

    def consensus_grad(self, X, Q):
        return kernels.grassmann_consensus_grad(X, Q)


class Euclidean(Manifold):
    """R^{n x r} with the Frobenius metric; every operation is affine."""

    def __init__(self, n, r=1):
        super().__init__("euclidean", int(n), int(r), np.inf, np.inf)

    def proj(self, x, a):
        return np.array(a, dtype=float, copy=True)

    def point_residual(self, x):
        return np.zeros(np.shape(x)[:-2])

    def tangent_residual(self, x, v):
        return np.zeros(np.shape(v)[:-2])

    def normalize(self, x):
        return x

    def dist(self, x, y):
        d = y - x
        return np.sqrt(np.sum(d * d, axis=(-2, -1)))

    def exp(self, x, v):
        return x + v

    def log(self, x, y):
        return y - x

    def retr(self, x, v):
        return x + v

    def transp(self, x, y, v):
        return np.array(v, dtype=float, copy=True)

    def random_point(self, rng):
        return rng.standard_normal(self.shape)

    def pair_dist_sq(self, X):
        diff = X[None, :] - X[:, None]
        return np.sum(diff * diff, axis=(-2, -1))

    def consensus_grad(self, X, Q):
        W = Q.copy()
        np.fill_diagonal(W, 0.0)
        return -(np.einsum("ij,jab->iab", W, X) - W.sum(axis=1)[:, None, None] * X)

    def transport_mix(self, src, dst, G, P):
        return np.einsum("ij,jab->iab", P, G)


ManifoldDescriptor = Manifold


def make_manifold(kind, n, r=1):
    if kind == "sphere":
        if r != 1:
            raise ManifoldError("sphere points are column vectors (r must be 1)")
        return Sphere(n)
    if kind == "grassmann":
        return Grassmann(n, r)
    if kind == "euclidean":
        return Euclidean(n, r)
    raise ManifoldError(f"unknown manifold kind {kind!r}")


# ---------------------------------------------------------------------------
# value types


def _as_coords(m, coords):
    a = np.array(coords, dtype=float)
    if a.ndim == 1 and m.cols == 1:
        a = a[:, None]
    if a.shape != m.shape:
        raise ManifoldError(f"expected coordinates of shape {m.shape}, got {a.shape}")
    a.setflags(write=False)
    return a


class ManifoldPoint:
    """Immutable point on ``descriptor`` (validated on construction)."""

    __slots__ = ("descriptor", "coords")

    def __init__(self, descriptor, coords, *, check=True):
        coords = _as_coords(descriptor, coords)
        if check and descriptor.point_residual(coords) > POINT_TOL:
            raise ManifoldError(f"coordinates do not lie on the {descriptor.kind} manifold")
        object.__setattr__(self, "descriptor", descriptor)
        object.__setattr__(self, "coords", coords)

    def __setattr__(self, name, value):
        raise AttributeError("ManifoldPoint is immutable")

    def __eq__(self, other):
        if not isinstance(other, ManifoldPoint):
            return NotImplemented
        return self is other or (
            self.descriptor == other.descriptor and np.array_equal(self.coords, other.coords)
        )

    __hash__ = None

    def __repr__(self):
        return f"ManifoldPoint({self.descriptor.kind}, {self.coords.ravel().tolist()})"


class TangentVector:
    """Immutable tangent vector tagged with its base point."""

    __slots__ = ("base", "coords")

    def __init__(self, base, coords, *, check=True):
        m = base.descriptor
        coords = _as_coords(m, coords)
        if check:
            scale = max(1.0, float(np.max(np.abs(coords), initial=0.0)))
            if m.tangent_residual(base.coords, coords) > POINT_TOL * scale:
                raise ManifoldError("coordinates are not tangent at the base point")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "coords", coords)

    def __setattr__(self, name, value):
        raise AttributeError("TangentVector is immutable")

    @property
    def descriptor(self):
        return self.base.descriptor

    def norm(self):
        return float(self.descriptor.norm(self.base.coords, self.coords))

    def __repr__(self):
        return f"TangentVector(at={self.base.coords.ravel().tolist()}, {self.coords.ravel().tolist()})"


def _same_manifold(x, y):
    if x.descriptor != y.descriptor:
        raise ManifoldError("points belong to different manifolds")


def _at(x, v):
    if v.base != x:
        raise ManifoldError("tangent vector is not based at the given point")


def inner(u, v):
    if u.base != v.base:
        raise ManifoldError("tangent vectors at different points")
    return float(u.descriptor.inner(u.base.coords, u.coords, v.coords))


def distance(x, y):
    _same_manifold(x, y)
    return float(x.descriptor.dist(x.coords, y.coords))


def exp(x, v):
    _at(x, v)
    return ManifoldPoint(x.descriptor, x.descriptor.exp(x.coords, v.coords))


def log(x, y):
    _same_manifold(x, y)
    return TangentVector(x, x.descriptor.log(x.coords, y.coords), check=False)


def retract(x, v):
    _at(x, v)
    return ManifoldPoint(x.descriptor, x.descriptor.retr(x.coords, v.coords))


def transport(x, y, v):
    _at(x, v)
    _same_manifold(x, y)
    if x == y:
        return TangentVector(y, v.coords, check=False)
    return TangentVector(y, x.descriptor.transp(x.coords, y.coords, v.coords), check=False)


def project_tangent(x, a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1 and x.descriptor.cols == 1:
        a = a[:, None]
    if a.shape != x.coords.shape:
        raise ManifoldError(f"expected ambient matrix of shape {x.coords.shape}, got {a.shape}")
    return TangentVector(x, x.descriptor.proj(x.coords, a), check=False)


def random_tangent(x, sigma, stream):
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return TangentVector(x, x.descriptor.random_tangent(x.coords, sigma, stream), check=False)


def random_point(m, stream):
    return ManifoldPoint(m, m.random_point(stream))


def streams(master_seed, count):
    """Independent counter-based (Philox) generators derived from one seed."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [np.random.Generator(np.random.Philox(c)) for c in children]
