"""Consensual distributed optimization on Riemannian manifolds."""
from mcons.manifolds import (
    Euclidean,
    Grassmann,
    Manifold,
    ManifoldDescriptor,
    ManifoldPoint,
    Sphere,
    TangentVector,
    make_manifold,
)
from mcons.network import NetworkGraph, metropolis_weights

__version__ = "0.1.0"
