import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import e
from mcons import network as nw
from mcons.consensus import (
    Configuration,
    ConsensusParams,
    consensus_step,
    estimate_mu_max,
    grad_potential,
    in_s_conv,
    make_params,
    max_pair_dist_sq,
    potential,
    potential_unweighted,
)
from mcons.engine import init_spread
from mcons.errors import ManifoldError, NotLocallyComparable
from mcons.manifolds import Euclidean, Grassmann, ManifoldPoint, Sphere
from mcons.oracles import fd_gradient_check

S2 = Sphere(3)
S3 = Sphere(4)
K2 = nw.metropolis_weights(nw.complete_adjacency(2))


def k2_config(d=None):
    if d is None:
        return Configuration(S2, np.stack([e(3, 0), e(3, 1)]))
    return Configuration(S2, np.stack([e(3, 0), math.cos(d) * e(3, 0) + math.sin(d) * e(3, 1)]))


def cloud(m, g, sigma, seed):
    rng = np.random.default_rng(seed)
    return init_spread(ManifoldPoint(m, m.random_point(rng)), g.num_nodes, sigma, rng)


def test_configuration_validation():
    with pytest.raises(ManifoldError):
        Configuration(S2, np.zeros((2, 4, 1)))
    w = k2_config()
    assert not w.coords.flags.writeable
    assert len(w) == 2 and w.points[1] == ManifoldPoint(S2, e(3, 1))
    assert Configuration.from_points(w.points).coords.tobytes() == w.coords.tobytes()
    with pytest.raises(ManifoldError):
        Configuration.from_points([ManifoldPoint(S2, e(3, 0)), ManifoldPoint(S3, e(4, 0))])


def test_params_enforce_step_ceiling():
    ConsensusParams(epsilon=1.9, r_c=1.0, g_diam=1, mu_max=1.0)
    with pytest.raises(ValueError, match="2/mu_max"):
        ConsensusParams(epsilon=2.0, r_c=1.0, g_diam=1, mu_max=1.0)
    with pytest.raises(ValueError):
        ConsensusParams(epsilon=0.0, r_c=1.0, g_diam=1)
    assert ConsensusParams(0.1, math.inf, 3).s_conv_threshold == math.inf


# -- potential -----------------------------------------------------------------


def test_potential_examples():
    same = Configuration(S2, np.stack([e(3, 0)] * 2))
    assert potential(same, K2) == 0.0
    assert potential(k2_config(), K2) == pytest.approx(math.pi**2 / 16, abs=1e-15)


def test_potential_relabeling(rng):
    g = nw.metropolis_weights(nw.random_connected_graph(8, 0.4, 2))
    w = cloud(S3, g, 0.3, 5)
    perm = rng.permutation(8)
    h = nw.metropolis_weights(g.adjacency[np.ix_(perm, perm)])
    assert potential(w.replace(w.coords[perm]), h) == pytest.approx(potential(w, g), rel=1e-14)


def test_potential_rejects_cut_locus():
    w = Configuration(S2, np.stack([e(3, 0), -e(3, 0)]))
    with pytest.raises(NotLocallyComparable, match="configuration not locally comparable"):
        potential(w, K2)


def test_potential_ignores_non_edges():
    # antipodal nodes that share no edge are fine
    P3 = nw.metropolis_weights(nw.path_adjacency(3))
    w = Configuration(S2, np.stack([e(3, 0), e(3, 1), -e(3, 0)]))
    assert potential(w, P3) == pytest.approx(2 * 0.5 * (1 / 3) * (math.pi / 2) ** 2)


# -- gradient ------------------------------------------------------------------


def test_grad_examples():
    same = Configuration(S2, np.stack([e(3, 0)] * 2))
    assert np.all(grad_potential(same, K2, 0).coords == 0)
    g0 = grad_potential(k2_config(), K2, 0)
    assert np.allclose(g0.coords, -(math.pi / 4) * e(3, 1), atol=1e-15)
    assert g0.norm() == pytest.approx(math.pi / 4, abs=1e-15)


def test_grad_one_sided_difference(rng):
    g = nw.metropolis_weights(nw.random_connected_graph(6, 0.5, 1))
    w = cloud(S3, g, 0.3, 3)
    t = 1e-5
    for i in range(6):
        G = grad_potential(w, g, i).coords
        v = S3.random_tangent(w.coords[i], 1.0, rng)
        v /= np.linalg.norm(v)
        X = np.array(w.coords)
        X[i] = S3.exp(X[i], t * v)
        fd = (potential(w.replace(X), g) - potential(w, g)) / t
        assert abs(fd - float(np.sum(G * v))) <= 1e-5 * max(np.linalg.norm(G), 1.0)


@pytest.mark.parametrize("m", [Sphere(3), Sphere(4), Grassmann(6, 2), Euclidean(3)])
def test_grad_central_difference(m, backend):
    g = nw.metropolis_weights(nw.random_connected_graph(10, 0.4, 11))
    W = g.edge_weights
    for seed in range(10):
        w = cloud(m, g, 0.2, seed)
        err = fd_gradient_check(
            lambda X: 0.25 * float(np.sum(W * m.pair_dist_sq(X))),
            lambda X: m.consensus_grad(X, W),
            w, directions=50, stream=np.random.default_rng(seed),
        )
        assert err <= 1e-5


# -- consensus step ------------------------------------------------------------


def test_consensus_step_fixed_point():
    same = Configuration(S2, np.stack([e(3, 1)] * 2))
    p = make_params(S2, K2, 0.1)
    assert np.array_equal(consensus_step(same, K2, p).coords, same.coords)


def test_consensus_step_k2_closed_form():
    w = k2_config()
    v = consensus_step(w, K2, make_params(S2, K2, 0.1))
    # the normalization retraction moves by arctan of the tangent length
    arc = math.atan(0.1 * math.pi / 4)
    assert S2.dist(w.coords[0], v.coords[0]) == pytest.approx(arc, abs=1e-15)
    assert S2.dist(w.coords[1], v.coords[1]) == pytest.approx(arc, abs=1e-15)
    assert S2.dist(v.coords[0], v.coords[1]) == pytest.approx(math.pi / 2 - 2 * arc, abs=1e-14)
    assert potential(v, K2) < math.pi**2 / 16


def test_consensus_step_is_synchronous():
    P3 = nw.metropolis_weights(nw.path_adjacency(3))
    w = Configuration(S2, np.stack([e(3, 0), e(3, 1), e(3, 2)]))
    p = make_params(S2, P3, 0.2)
    v = consensus_step(w, P3, p)
    for i in range(3):
        expect = S2.retr(w.coords[i], -0.2 * grad_potential(w, P3, i).coords)
        assert np.allclose(v.coords[i], expect, atol=1e-15)


# -- S_conv --------------------------------------------------------------------


def test_in_s_conv_examples():
    p = make_params(S2, K2, 0.1)
    assert in_s_conv(Configuration(S2, np.stack([e(3, 0)] * 2)), K2, p)
    E = Euclidean(3)
    far = Configuration(E, np.stack([np.zeros((3, 1)), 1e6 * np.ones((3, 1))]))
    assert in_s_conv(far, K2, make_params(E, K2, 0.1))
    # unweighted phi = d^2 / 2 against (pi/2)^2 / 2
    assert p.s_conv_threshold == pytest.approx((math.pi / 2) ** 2 / 2)
    assert in_s_conv(k2_config(math.pi / 2 * 0.999), K2, p)
    assert not in_s_conv(k2_config(math.pi / 2 * 1.001), K2, p)


@given(seed=st.integers(0, 10_000), sigma=st.floats(0.01, 1.0))
def test_diameter_bound(seed, sigma):
    rng = np.random.default_rng(seed)
    g = nw.metropolis_weights(nw.random_connected_graph(int(rng.integers(2, 12)), 0.4, seed))
    w = cloud(S3, g, sigma, seed)
    assert max_pair_dist_sq(w) <= 2 * g.diameter * potential_unweighted(w, g) * (1 + 1e-12) + 1e-15


@given(seed=st.integers(0, 10_000))
def test_zero_potential_iff_consensus(seed):
    g = nw.metropolis_weights(nw.random_connected_graph(5, 0.5, seed))
    x = S3.random_point(np.random.default_rng(seed))
    same = Configuration(S3, np.stack([x] * 5))
    assert potential(same, g) <= 1e-24 and max_pair_dist_sq(same) <= 1e-24
    other = cloud(S3, g, 0.1, seed)
    assert potential(other, g) > 0


# -- mu_max --------------------------------------------------------------------


def test_mu_max_euclidean_k2():
    E = Euclidean(3)
    w = Configuration(E, np.stack([np.zeros((3, 1)), np.ones((3, 1))]))
    est = estimate_mu_max(w, K2, 20, np.random.default_rng(0))
    assert est / 1.2 == pytest.approx(1.0, abs=0.01)
    assert est == pytest.approx(1.2, abs=0.01)


def test_mu_max_sphere_consensus_and_determinism():
    g = nw.metropolis_weights(nw.random_connected_graph(10, 0.3, 0))
    x = S3.random_point(np.random.default_rng(1))
    w = Configuration(S3, np.stack([x] * 10))
    a = estimate_mu_max(w, g, 10, np.random.default_rng(4))
    b = estimate_mu_max(w, g, 10, np.random.default_rng(4))
    assert math.isfinite(a) and a > 0 and a == b
    with pytest.raises(ValueError):
        estimate_mu_max(w, g, 0, np.random.default_rng(4))
